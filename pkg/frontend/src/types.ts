/** Wire types for the annotation API, plus payload validation.
 *
 * The client is the last line of defense for annotation blindness: any
 * server payload carrying a difficulty rating is rejected outright, so
 * a misconfigured backend cannot leak meters into the judging UI.
 */

export interface PreviewRow {
  beat: number;
  seconds: number;
  symbols: string;
  grid: number;
}

export interface ChartPreview {
  rows: PreviewRow[];
  total_beats: number;
  bpm: number | null;
}

export interface LevelPayload {
  song_id: string;
  level_index: number;
  title: string;
  meter_hidden: true;
  chart_preview: ChartPreview;
}

export interface PairPayload {
  pair_id: string;
  done: false;
  disagreement_count: number;
  level_a: LevelPayload;
  level_b: LevelPayload;
}

export interface DonePayload {
  pair_id: null;
  done: true;
}

export type NextPairResponse = PairPayload | DonePayload;

export type Choice = "a_harder" | "b_harder";

export interface JudgmentRequest {
  pair_id: string;
  choice: Choice;
  annotator: string;
  nonce: string;
}

export interface JudgmentResponse {
  pair_id: string;
  votes_a_harder: number;
  votes_b_harder: number;
}

export interface SourceScore {
  score: number;
  pairs: number;
}

export interface ScoresResponse {
  judged_pairs: number;
  sources: Record<string, SourceScore>;
}

export class BlindnessViolation extends Error {}

export class MalformedPayload extends Error {}

/** Throw if any key anywhere in the payload names a meter.
 *
 * Only the literal `meter_hidden` marker is allowed; everything else
 * containing "meter" (case-insensitive) is treated as a leaked rating.
 */
export function assertMeterBlind(node: unknown, path = "$"): void {
  if (Array.isArray(node)) {
    node.forEach((item, i) => assertMeterBlind(item, `${path}[${i}]`));
    return;
  }
  if (node !== null && typeof node === "object") {
    for (const [key, value] of Object.entries(node)) {
      if (key !== "meter_hidden" && key.toLowerCase().includes("meter")) {
        throw new BlindnessViolation(`difficulty leak at ${path}.${key}`);
      }
      assertMeterBlind(value, `${path}.${key}`);
    }
  }
}

function isRecord(node: unknown): node is Record<string, unknown> {
  return node !== null && typeof node === "object" && !Array.isArray(node);
}

function checkLevel(node: unknown, label: string): LevelPayload {
  if (!isRecord(node)) {
    throw new MalformedPayload(`${label} is not an object`);
  }
  if (typeof node.song_id !== "string" || typeof node.title !== "string") {
    throw new MalformedPayload(`${label} is missing song_id or title`);
  }
  if (typeof node.level_index !== "number") {
    throw new MalformedPayload(`${label} is missing level_index`);
  }
  if (node.meter_hidden !== true) {
    throw new MalformedPayload(`${label} does not declare meter_hidden`);
  }
  const preview = node.chart_preview;
  if (!isRecord(preview) || !Array.isArray(preview.rows)) {
    throw new MalformedPayload(`${label} has no chart preview rows`);
  }
  for (const row of preview.rows) {
    if (
      !isRecord(row) ||
      typeof row.beat !== "number" ||
      typeof row.symbols !== "string" ||
      typeof row.grid !== "number"
    ) {
      throw new MalformedPayload(`${label} has a malformed preview row`);
    }
  }
  return node as unknown as LevelPayload;
}

/** Validate a GET /api/pairs/next body: shape first, then blindness. */
export function parseNextPair(payload: unknown): NextPairResponse {
  if (!isRecord(payload)) {
    throw new MalformedPayload("next-pair response is not an object");
  }
  assertMeterBlind(payload);
  if (payload.done === true) {
    return { pair_id: null, done: true };
  }
  if (typeof payload.pair_id !== "string") {
    throw new MalformedPayload("pair payload has no pair_id");
  }
  return {
    pair_id: payload.pair_id,
    done: false,
    disagreement_count:
      typeof payload.disagreement_count === "number" ? payload.disagreement_count : 0,
    level_a: checkLevel(payload.level_a, "level_a"),
    level_b: checkLevel(payload.level_b, "level_b"),
  };
}
