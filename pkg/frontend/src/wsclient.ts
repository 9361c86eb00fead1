/**
 * Minimal RFC 6455 client over a raw TCP socket, for tests under Node
 * (no browser WebSocket, no external packages). Text frames only; client
 * frames are masked as the RFC requires.
 */

import * as net from "node:net";
import * as crypto from "node:crypto";

export class WsClient {
  private sock!: net.Socket;
  private buf = Buffer.alloc(0);
  private handlers: ((text: string) => void)[] = [];

  async connect(host: string, port: number, path = "/ws"): Promise<void> {
    this.sock = net.connect(port, host);
    await new Promise<void>((res, rej) => {
      this.sock.once("connect", res);
      this.sock.once("error", rej);
    });
    const key = crypto.randomBytes(16).toString("base64");
    this.sock.write(
      `GET ${path} HTTP/1.1\r\nHost: ${host}\r\nUpgrade: websocket\r\n` +
        `Connection: Upgrade\r\nSec-WebSocket-Key: ${key}\r\nSec-WebSocket-Version: 13\r\n\r\n`
    );
    await new Promise<void>((res, rej) => {
      const onData = (chunk: Buffer) => {
        this.buf = Buffer.concat([this.buf, chunk]);
        const idx = this.buf.indexOf("\r\n\r\n");
        if (idx >= 0) {
          const head = this.buf.subarray(0, idx).toString();
          if (!head.includes("101")) rej(new Error(`handshake failed: ${head.split("\r\n")[0]}`));
          this.buf = this.buf.subarray(idx + 4);
          this.sock.off("data", onData);
          res();
        }
      };
      this.sock.on("data", onData);
      this.sock.once("error", rej);
    });
    this.sock.on("data", (chunk) => {
      this.buf = Buffer.concat([this.buf, chunk]);
      this.drain();
    });
  }

  onText(handler: (text: string) => void): void {
    this.handlers.push(handler);
  }

  private drain(): void {
    for (;;) {
      if (this.buf.length < 2) return;
      const opcode = this.buf[0] & 0x0f;
      let len = this.buf[1] & 0x7f;
      let off = 2;
      if (len === 126) {
        if (this.buf.length < 4) return;
        len = this.buf.readUInt16BE(2);
        off = 4;
      } else if (len === 127) {
        if (this.buf.length < 10) return;
        len = Number(this.buf.readBigUInt64BE(2));
        off = 10;
      }
      if (this.buf.length < off + len) return;
      const payload = this.buf.subarray(off, off + len);
      this.buf = this.buf.subarray(off + len);
      if (opcode === 0x1) {
        const text = payload.toString("utf8");
        for (const h of this.handlers) h(text);
      } else if (opcode === 0x9) {
        this.sendFrame(0xa, payload); // pong
      } else if (opcode === 0x8) {
        this.sock.end();
        return;
      }
    }
  }

  sendText(text: string): void {
    this.sendFrame(0x1, Buffer.from(text, "utf8"));
  }

  private sendFrame(opcode: number, payload: Buffer): void {
    const mask = crypto.randomBytes(4);
    const masked = Buffer.from(payload.map((b, i) => b ^ mask[i % 4]));
    let header: Buffer;
    if (payload.length < 126) {
      header = Buffer.from([0x80 | opcode, 0x80 | payload.length]);
    } else if (payload.length < 65536) {
      header = Buffer.alloc(4);
      header[0] = 0x80 | opcode;
      header[1] = 0x80 | 126;
      header.writeUInt16BE(payload.length, 2);
    } else {
      header = Buffer.alloc(10);
      header[0] = 0x80 | opcode;
      header[1] = 0x80 | 127;
      header.writeBigUInt64BE(BigInt(payload.length), 2);
    }
    this.sock.write(Buffer.concat([header, mask, masked]));
  }

  close(): void {
    this.sock?.destroy();
  }
}
