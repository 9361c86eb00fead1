/** Wire schema for the operator console (versioned with `v`). */

export const PROTOCOL_VERSION = 1;

export interface Frame {
  v: number;
  t: number;
  kind: "snapshot" | "positions" | "event" | "planner" | "ack" | string;
  payload: any;
}

export interface SheetPosition {
  module: string;
  frac: number;
  job: string;
  status: string;
}

export interface SnapshotPayload {
  modules: Record<string, boolean>;
  sheets: Record<string, SheetPosition>;
  unplanned: number;
  planned: number;
}

export interface LayoutModule {
  name: string;
  kind: string;
  x: number;
  y: number;
  rotation: number;
}

export interface Layout {
  v: number;
  name: string;
  modules: LayoutModule[];
  connections: { from: string; to: string }[];
  finishers: string[];
  purge_trays: string[];
}

export type ControlAction =
  | { kind: "ToggleModule"; module: string; state: "on" | "off" }
  | { kind: "JamSheet"; seq: number }
  | { kind: "SubmitJob"; scenario: string }
  | { kind: "SetWeights"; w1: number; w2: number }
  | { kind: "SetPolicy"; policy: "purge" | "hold" };

export interface CommandResult {
  ok: boolean;
  error?: string;
  seqs?: number[];
}
