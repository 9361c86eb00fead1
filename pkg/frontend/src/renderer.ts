/**
 * SVG rendering of the machine and the live sheets.
 *
 * Rendering is a pure function of (layout, state); a frame buffer holds the
 * latest state and the screen refreshes on animation frames, decoupled from
 * network cadence.
 */

import { boxes, edges, sheetPoint, Box } from "./geometry";
import { Layout } from "./protocol";
import { ConsoleState, visibleSheets } from "./state";

const SVG_NS = "http://www.w3.org/2000/svg";

const KIND_FILL: Record<string, string> = {
  feeder: "#7aa37a",
  engine: "#5b7fb5",
  finisher: "#a38d5c",
  purge: "#a36060",
  inverter: "#8a7ab0",
  transport: "#9aa0a6",
};

const JOB_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

export class Renderer {
  private readonly svg: SVGSVGElement;
  private readonly boxMap: Map<string, Box>;
  private readonly moduleRects = new Map<string, SVGRectElement>();
  private sheetLayer: SVGGElement;

  constructor(private readonly layout: Layout, mount: HTMLElement) {
    this.boxMap = boxes(layout);
    this.svg = document.createElementNS(SVG_NS, "svg");
    const maxX = Math.max(...[...this.boxMap.values()].map((b) => b.cx + b.w));
    const maxY = Math.max(...[...this.boxMap.values()].map((b) => b.cy + b.h));
    this.svg.setAttribute("viewBox", `0 0 ${maxX + 40} ${maxY + 40}`);
    this.svg.setAttribute("width", "100%");
    mount.appendChild(this.svg);
    this.drawStatic();
    this.sheetLayer = document.createElementNS(SVG_NS, "g");
    this.svg.appendChild(this.sheetLayer);
  }

  private drawStatic(): void {
    for (const e of edges(this.layout, this.boxMap)) {
      const line = document.createElementNS(SVG_NS, "line");
      line.setAttribute("x1", String(e.x1));
      line.setAttribute("y1", String(e.y1));
      line.setAttribute("x2", String(e.x2));
      line.setAttribute("y2", String(e.y2));
      line.setAttribute("stroke", "#b5bac1");
      line.setAttribute("stroke-width", "2");
      this.svg.appendChild(line);
    }
    for (const box of this.boxMap.values()) {
      const rect = document.createElementNS(SVG_NS, "rect");
      rect.setAttribute("x", String(box.cx - box.w / 2));
      rect.setAttribute("y", String(box.cy - box.h / 2));
      rect.setAttribute("width", String(box.w));
      rect.setAttribute("height", String(box.h));
      rect.setAttribute("rx", "4");
      rect.setAttribute("fill", KIND_FILL[box.kind] ?? KIND_FILL.transport);
      rect.dataset.module = box.name;
      this.svg.appendChild(rect);
      this.moduleRects.set(box.name, rect);
      const label = document.createElementNS(SVG_NS, "text");
      label.setAttribute("x", String(box.cx));
      label.setAttribute("y", String(box.cy - box.h / 2 - 4));
      label.setAttribute("text-anchor", "middle");
      label.setAttribute("font-size", "11");
      label.textContent = box.name;
      this.svg.appendChild(label);
    }
  }

  /** Repaint the dynamic layer from the latest reduced state. */
  render(state: ConsoleState): void {
    for (const [name, rect] of this.moduleRects) {
      const on = state.modulesOn[name] ?? true;
      rect.setAttribute("opacity", on ? "1" : "0.25");
      rect.setAttribute("stroke", on ? "none" : "#c0392b");
      rect.setAttribute("stroke-width", on ? "0" : "3");
    }
    this.sheetLayer.replaceChildren();
    const jobs = new Map<string, number>();
    for (const sheet of visibleSheets(state)) {
      const box = this.boxMap.get(sheet.module);
      if (!box) continue;
      const p = sheetPoint(box, sheet.frac);
      if (!jobs.has(sheet.job)) jobs.set(sheet.job, jobs.size);
      const glyph = document.createElementNS(SVG_NS, "circle");
      glyph.setAttribute("cx", String(p.x));
      glyph.setAttribute("cy", String(p.y));
      glyph.setAttribute("r", "7");
      glyph.setAttribute(
        "fill",
        sheet.status === "lost" ? "#222" : JOB_COLORS[jobs.get(sheet.job)! % JOB_COLORS.length]
      );
      glyph.dataset.seq = sheet.seq;
      const title = document.createElementNS(SVG_NS, "title");
      title.textContent = `sheet ${sheet.seq} (${sheet.job}) ${sheet.status}`;
      glyph.appendChild(title);
      this.sheetLayer.appendChild(glyph);
    }
  }

  onModuleClick(handler: (module: string) => void): void {
    this.svg.addEventListener("click", (ev) => {
      const target = ev.target as SVGElement;
      if (target.dataset?.module) handler(target.dataset.module);
    });
  }
}
