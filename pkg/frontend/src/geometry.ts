/** Machine drawing: model coordinates to screen, sheet interpolation. */

import { Layout, LayoutModule } from "./protocol";

export interface Box {
  name: string;
  kind: string;
  cx: number;
  cy: number;
  w: number;
  h: number;
  rotation: number;
}

const SCALE = 96;
const MARGIN = 60;

export function boxes(layout: Layout): Map<string, Box> {
  const xs = layout.modules.map((m) => m.x);
  const ys = layout.modules.map((m) => m.y);
  const minX = Math.min(...xs);
  const maxY = Math.max(...ys);
  const out = new Map<string, Box>();
  for (const m of layout.modules) {
    out.set(m.name, {
      name: m.name,
      kind: m.kind,
      cx: MARGIN + (m.x - minX) * SCALE,
      cy: MARGIN + (maxY - m.y) * SCALE,
      w: sizeFor(m).w,
      h: sizeFor(m).h,
      rotation: m.rotation,
    });
  }
  return out;
}

function sizeFor(m: LayoutModule): { w: number; h: number } {
  switch (m.kind) {
    case "engine":
      return { w: 78, h: 44 };
    case "feeder":
    case "finisher":
    case "purge":
      return { w: 64, h: 40 };
    case "inverter":
      return { w: 64, h: 30 };
    default:
      return { w: 56, h: 22 };
  }
}

/**
 * Sheet glyph position: linear interpolation across the module box in the
 * travel direction (left to right within a module footprint).
 */
export function sheetPoint(box: Box, frac: number): { x: number; y: number } {
  const f = Math.max(0, Math.min(1, frac));
  return { x: box.cx - box.w / 2 + f * box.w, y: box.cy };
}

export function edges(layout: Layout, b: Map<string, Box>): { x1: number; y1: number; x2: number; y2: number }[] {
  const out = [];
  for (const c of layout.connections) {
    const from = b.get(c.from.split(".")[0]);
    const to = b.get(c.to.split(".")[0]);
    if (from && to) {
      out.push({ x1: from.cx + from.w / 2, y1: from.cy, x2: to.cx - to.w / 2, y2: to.cy });
    }
  }
  return out;
}
