/** Thin fetch wrapper around the annotation API.
 *
 * Submission retries reuse the SAME nonce so the server's idempotency
 * key can collapse duplicates; a 409 therefore means "already counted"
 * and the caller should simply advance to the next pair.
 */

import {
  JudgmentRequest,
  JudgmentResponse,
  NextPairResponse,
  ScoresResponse,
  parseNextPair,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

const defaultFetch: FetchLike = (input, init) => fetch(input, init);

export function makeNonce(random: () => number = Math.random): string {
  const digits = () => Math.floor(random() * 0xffffffff).toString(16).padStart(8, "0");
  return `${Date.now().toString(16)}-${digits()}${digits()}`;
}

export async function fetchNextPair(
  annotator: string,
  fetchFn: FetchLike = defaultFetch,
): Promise<NextPairResponse> {
  const resp = await fetchFn(`/api/pairs/next?annotator=${encodeURIComponent(annotator)}`);
  if (!resp.ok) {
    throw new ApiError(resp.status, `next-pair request failed (${resp.status})`);
  }
  return parseNextPair(await resp.json());
}

export interface SubmitOutcome {
  accepted: boolean;
  /** true when the server had already counted this nonce (HTTP 409) */
  duplicate: boolean;
  votes?: JudgmentResponse;
}

export async function submitJudgment(
  judgment: JudgmentRequest,
  fetchFn: FetchLike = defaultFetch,
  retries = 2,
): Promise<SubmitOutcome> {
  const body = JSON.stringify(judgment); // frozen once: retries must not mint a new nonce
  let lastError: unknown = null;
  for (let attempt = 0; attempt <= retries; attempt++) {
    let resp: Response;
    try {
      resp = await fetchFn("/api/judgments", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body,
      });
    } catch (err) {
      lastError = err; // network hiccup: retry with the identical body
      continue;
    }
    if (resp.status === 409) {
      return { accepted: false, duplicate: true };
    }
    if (!resp.ok) {
      throw new ApiError(resp.status, `judgment rejected (${resp.status})`);
    }
    return { accepted: true, duplicate: false, votes: (await resp.json()) as JudgmentResponse };
  }
  throw lastError instanceof Error ? lastError : new Error("judgment submission failed");
}

/** Returns null before any judgment exists (the server answers 409). */
export async function fetchScores(
  fetchFn: FetchLike = defaultFetch,
): Promise<ScoresResponse | null> {
  const resp = await fetchFn("/api/scores");
  if (resp.status === 409) {
    return null;
  }
  if (!resp.ok) {
    throw new ApiError(resp.status, `scores request failed (${resp.status})`);
  }
  return (await resp.json()) as ScoresResponse;
}
