/**
 * Console state: a pure reducer over server frames.
 *
 * The console never simulates; every rendered value comes from a received
 * frame. Positions stick to the latest positions/snapshot frame, so a replay
 * of recorded frames reproduces the display exactly.
 */

import { Frame, SheetPosition } from "./protocol";

export interface SheetView extends SheetPosition {
  seq: string;
}

export interface ConsoleState {
  t: number;
  modulesOn: Record<string, boolean>;
  sheets: Record<string, SheetView>;
  unplanned: number;
  planned: number;
  events: Frame[];
  lastPositionsT: number;
  plans: Record<string, { end: number; released: boolean; done: boolean }>;
}

export function initialState(): ConsoleState {
  return {
    t: 0,
    modulesOn: {},
    sheets: {},
    unplanned: 0,
    planned: 0,
    events: [],
    lastPositionsT: -1,
    plans: {},
  };
}

const EVENT_LOG_LIMIT = 400;

export function reduce(state: ConsoleState, frame: Frame): ConsoleState {
  const next = { ...state, t: frame.t };
  switch (frame.kind) {
    case "snapshot": {
      next.modulesOn = { ...frame.payload.modules };
      next.sheets = {};
      for (const [seq, pos] of Object.entries<any>(frame.payload.sheets || {})) {
        next.sheets[seq] = { seq, ...pos };
      }
      next.unplanned = frame.payload.unplanned ?? 0;
      next.planned = frame.payload.planned ?? 0;
      next.lastPositionsT = frame.t;
      break;
    }
    case "positions": {
      const sheets: Record<string, SheetView> = {};
      for (const [seq, pos] of Object.entries<any>(frame.payload)) {
        sheets[seq] = { seq, ...pos };
      }
      next.sheets = sheets;
      next.lastPositionsT = frame.t;
      break;
    }
    case "event": {
      next.events = [...state.events.slice(-EVENT_LOG_LIMIT + 1), frame];
      const ev = frame.payload;
      if (ev.kind === "fault" && ev.module) {
        next.modulesOn = { ...state.modulesOn, [ev.module]: ev.state === "on" };
      }
      if (ev.kind === "action-start") {
        const sheet = state.sheets[String(ev.seq)];
        if (sheet) {
          next.sheets = {
            ...state.sheets,
            [String(ev.seq)]: { ...sheet, module: ev.module, frac: 0 },
          };
        }
      }
      if (ev.kind === "commit" || ev.kind === "done") {
        const plan = state.plans[String(ev.seq)];
        if (plan) {
          next.plans = {
            ...state.plans,
            [String(ev.seq)]: {
              ...plan,
              released: true,
              done: plan.done || ev.kind === "done",
            },
          };
        }
      }
      break;
    }
    case "planner": {
      next.events = [...state.events.slice(-EVENT_LOG_LIMIT + 1), frame];
      const ev = frame.payload;
      if (ev.kind === "planned") {
        next.plans = {
          ...state.plans,
          [String(ev.seq)]: { end: ev.end, released: false, done: false },
        };
      }
      break;
    }
    case "ack": {
      next.events = [...state.events.slice(-EVENT_LOG_LIMIT + 1), frame];
      break;
    }
  }
  return next;
}

/** Sheets currently renderable (position known from the server). */
export function visibleSheets(state: ConsoleState): SheetView[] {
  return Object.values(state.sheets).sort((a, b) => Number(a.seq) - Number(b.seq));
}
