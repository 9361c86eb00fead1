/**
 * Server connection: one event-stream WebSocket plus a request channel for
 * commands. Reconnects with backoff; every reconnect starts from the server's
 * snapshot frame, so no client-side state survives a drop.
 */

import { ControlAction, CommandResult, Frame, Layout } from "./protocol";

export class Connection {
  private ws: WebSocket | null = null;
  private backoff = 500;
  private closed = false;

  constructor(
    private readonly base: string,
    private readonly onFrame: (frame: Frame) => void,
    private readonly onStatus: (status: "open" | "retrying") => void
  ) {}

  async layout(): Promise<Layout> {
    const resp = await fetch(`${this.base}/layout`);
    return (await resp.json()) as Layout;
  }

  open(): void {
    const url = this.base.replace(/^http/, "ws") + "/ws";
    this.ws = new WebSocket(url);
    this.ws.onopen = () => {
      this.backoff = 500;
      this.onStatus("open");
    };
    this.ws.onmessage = (ev) => {
      try {
        this.onFrame(JSON.parse(String(ev.data)) as Frame);
      } catch {
        /* tolerate malformed frames */
      }
    };
    this.ws.onclose = () => this.retry();
    this.ws.onerror = () => this.ws?.close();
  }

  private retry(): void {
    if (this.closed) return;
    this.onStatus("retrying");
    setTimeout(() => this.open(), this.backoff);
    this.backoff = Math.min(this.backoff * 2, 8000);
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }

  async send(action: ControlAction): Promise<CommandResult> {
    const resp = await fetch(`${this.base}/cmd`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(action),
    });
    return (await resp.json()) as CommandResult;
  }
}
