import { describe, expect, it } from "vitest";

import {
  BlindnessViolation,
  MalformedPayload,
  assertMeterBlind,
  parseNextPair,
} from "../src/types.js";

const level = (title: string) => ({
  song_id: "pack/song",
  level_index: 0,
  title,
  meter_hidden: true,
  chart_preview: {
    rows: [
      { beat: 0, seconds: 0, symbols: "1000", grid: 4 },
      { beat: 0.5, seconds: 0.25, symbols: "0010", grid: 8 },
    ],
    total_beats: 4,
    bpm: 120,
  },
});

const pairBody = () => ({
  pair_id: "a|b",
  done: false,
  disagreement_count: 1,
  level_a: level("Song A"),
  level_b: level("Song B"),
});

describe("assertMeterBlind", () => {
  it("accepts payloads whose only meter-ish key is meter_hidden", () => {
    expect(() => assertMeterBlind(pairBody())).not.toThrow();
  });

  it.each(["meter", "Meter", "raw_meter", "meterValue"])(
    "rejects a %s key at any depth",
    (key) => {
      const body = pairBody() as Record<string, unknown>;
      (body.level_b as Record<string, unknown>)[key] = 7;
      expect(() => assertMeterBlind(body)).toThrow(BlindnessViolation);
    },
  );

  it("rejects leaks buried inside arrays", () => {
    const body = pairBody();
    (body.level_a.chart_preview.rows as unknown[]).push({ meter: 9 });
    expect(() => assertMeterBlind(body)).toThrow(BlindnessViolation);
  });
});

describe("parseNextPair", () => {
  it("passes a well-formed pair through unchanged", () => {
    const parsed = parseNextPair(pairBody());
    if (parsed.done) throw new Error("expected a pair");
    expect(parsed.pair_id).toBe("a|b");
    expect(parsed.level_a.title).toBe("Song A");
    expect(parsed.level_b.chart_preview.rows).toHaveLength(2);
  });

  it("recognizes the done sentinel", () => {
    expect(parseNextPair({ pair_id: null, done: true })).toEqual({
      pair_id: null,
      done: true,
    });
  });

  it("rejects a pair that leaks a meter", () => {
    const body = pairBody() as Record<string, unknown>;
    (body.level_a as Record<string, unknown>).meter = 3;
    expect(() => parseNextPair(body)).toThrow(BlindnessViolation);
  });

  it("rejects levels that do not declare meter_hidden", () => {
    const body = pairBody();
    (body.level_a as Record<string, unknown>).meter_hidden = false;
    expect(() => parseNextPair(body)).toThrow(MalformedPayload);
  });

  it("rejects missing pair ids and malformed rows", () => {
    expect(() => parseNextPair({ done: false })).toThrow(MalformedPayload);
    const body = pairBody();
    (body.level_b.chart_preview.rows as unknown[])[0] = { beat: "x" };
    expect(() => parseNextPair(body)).toThrow(MalformedPayload);
  });

  it("rejects non-object bodies", () => {
    expect(() => parseNextPair("nope")).toThrow(MalformedPayload);
    expect(() => parseNextPair(null)).toThrow(MalformedPayload);
  });
});
