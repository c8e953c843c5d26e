// Typed client for the review service JSON API. The UI talks to the server
// through these calls only; every candidate it ever displays arrives here.

export interface Candidate {
  token: string;
  token_id: number;
  logprob: number;
  rank: number;
}

export interface Confirmation {
  token: string;
  override: boolean;
}

export interface SessionResource {
  id: string;
  original_text: string;
  normalized_text: string;
  positions: number[];
  k: number;
  candidates: Record<string, Candidate[]>;
  confirmations: Record<string, Confirmation | null>;
  created: string;
  updated: string;
  checkpoint_id: string;
  n_positions: number;
  n_confirmed: number;
  completed: boolean;
  restored_text: string | null;
}

export interface TranslationResult {
  source: string;
  hypothesis: string;
  raw_logprob: number;
  score: number;
  checkpoint_id: string;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const res = await fetch(path, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && body.detail) detail = String(body.detail);
    } catch {
      // keep statusText
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export function getSession(id: string): Promise<SessionResource> {
  return request(`/sessions/${encodeURIComponent(id)}`);
}

export function createSession(text: string, k?: number): Promise<SessionResource> {
  return request("/sessions", {
    method: "POST",
    body: JSON.stringify(k ? { text, k } : { text }),
  });
}

export function confirmChoice(
  id: string,
  position: number,
  token: string,
  override = false,
): Promise<SessionResource> {
  return request(`/sessions/${encodeURIComponent(id)}/confirm`, {
    method: "POST",
    body: JSON.stringify({ position, token, override }),
  });
}

export function translate(text: string, beamSize?: number): Promise<TranslationResult> {
  return request("/translate", {
    method: "POST",
    body: JSON.stringify(beamSize ? { text, beam_size: beamSize } : { text }),
  });
}
