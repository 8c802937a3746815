/** Pure chart-layout helpers: preview rows in, positioned glyphs out.
 *
 * Kept free of DOM access so the geometry is unit-testable; app.ts
 * turns the plan into elements.
 */

import { ChartPreview } from "./types.js";

export interface ArrowGlyph {
  lane: number;
  y: number;
  symbol: string;
  colorClass: string;
  glyphClass: string;
}

export interface LanePlan {
  lanes: number;
  height: number;
  arrows: ArrowGlyph[];
  beatLines: number[];
}

/** Quantization color, following the usual chart conventions. */
export function gridColorClass(grid: number): string {
  switch (grid) {
    case 4:
      return "q4";
    case 8:
      return "q8";
    case 12:
    case 24:
      return "q12";
    case 16:
      return "q16";
    case 32:
      return "q32";
    default:
      return "qother";
  }
}

const GLYPH_CLASSES: Record<string, string> = {
  "1": "sym-tap",
  "2": "sym-hold",
  "3": "sym-tail",
  "4": "sym-roll",
  M: "sym-mine",
};

export function lanePlan(preview: ChartPreview, pixelsPerBeat = 24): LanePlan {
  const lanes = preview.rows[0]?.symbols.length ?? 4;
  const arrows: ArrowGlyph[] = [];
  for (const row of preview.rows) {
    const y = row.beat * pixelsPerBeat;
    for (let lane = 0; lane < row.symbols.length; lane++) {
      const symbol = row.symbols[lane] ?? "0";
      if (symbol === "0") {
        continue;
      }
      arrows.push({
        lane,
        y,
        symbol,
        colorClass: gridColorClass(row.grid),
        glyphClass: GLYPH_CLASSES[symbol] ?? "sym-other",
      });
    }
  }
  const beatLines: number[] = [];
  for (let beat = 0; beat <= Math.ceil(preview.total_beats); beat += 4) {
    beatLines.push(beat * pixelsPerBeat);
  }
  return {
    lanes,
    height: Math.max(1, preview.total_beats * pixelsPerBeat),
    arrows,
    beatLines,
  };
}

export function describeChart(preview: ChartPreview): string {
  const steps = preview.rows.length;
  const bpm = preview.bpm === null ? "?" : preview.bpm.toFixed(0);
  return `${steps} rows · ${bpm} BPM`;
}
