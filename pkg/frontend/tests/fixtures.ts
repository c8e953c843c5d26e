// A canned session resource shaped exactly like the service's JSON: two
// damaged slots with ten ranked candidates each.

import type { Candidate, SessionResource } from "../src/api.js";

const SLOT_TOKENS: Record<string, string[]> = {
  "2": ["宮", "殿", "門", "闕", "堂", "樓", "閣", "室", "齋", "軒"],
  "4": ["參", "朝", "講", "宴", "祭", "謁", "筵", "對", "賀", "會"],
};

function candidates(position: string): Candidate[] {
  return SLOT_TOKENS[position].map((token, i) => ({
    token,
    token_id: 100 + i,
    logprob: -0.5 - i * 0.7,
    rank: i + 1,
  }));
}

export function fixtureSession(): SessionResource {
  return {
    id: "fixture01",
    original_text: "上在□德□筵",
    normalized_text: "上在□德□筵",
    positions: [2, 4],
    k: 10,
    candidates: { "2": candidates("2"), "4": candidates("4") },
    confirmations: { "2": null, "4": null },
    created: "2026-01-01T00:00:00+00:00",
    updated: "2026-01-01T00:00:00+00:00",
    checkpoint_id: "cafe0123deadbeef",
    n_positions: 2,
    n_confirmed: 0,
    completed: false,
    restored_text: null,
  };
}

export function allFixtureTokens(): Set<string> {
  return new Set(Object.values(SLOT_TOKENS).flat());
}
