// Pure view-model helpers: everything here is a projection of the session
// resource the server returned, so reloading the page rebuilds the same view.

import type { Candidate, SessionResource } from "./api.js";

export interface SlotView {
  position: number;
  candidates: Candidate[];
  confirmedToken: string | null;
  overridden: boolean;
}

export function slotViews(session: SessionResource): SlotView[] {
  return session.positions.map((position) => {
    const confirmation = session.confirmations[String(position)] ?? null;
    const candidates = [...(session.candidates[String(position)] ?? [])].sort(
      (a, b) => a.rank - b.rank,
    );
    return {
      position,
      candidates,
      confirmedToken: confirmation ? confirmation.token : null,
      overridden: confirmation ? confirmation.override : false,
    };
  });
}

// Log-probabilities renormalized within the K shown candidates; the bars are
// labeled as relative shares, not absolute model probabilities.
export function relativeShares(candidates: Candidate[]): number[] {
  if (candidates.length === 0) return [];
  const maxLp = Math.max(...candidates.map((c) => c.logprob));
  const weights = candidates.map((c) => Math.exp(c.logprob - maxLp));
  const total = weights.reduce((a, b) => a + b, 0);
  return weights.map((w) => w / total);
}

export function progressLabel(session: SessionResource): string {
  return `${session.n_confirmed} / ${session.n_positions} confirmed`;
}

// Preview with confirmed tokens substituted and open slots left as damage
// marks; identical to the server's restored_text once everything confirms.
export function previewText(session: SessionResource): string {
  const chars = [...session.normalized_text];
  for (const [pos, confirmation] of Object.entries(session.confirmations)) {
    if (confirmation) chars[Number(pos)] = confirmation.token;
  }
  return chars.join("");
}
