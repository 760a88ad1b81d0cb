/**
 * Websocket client owning sequence numbering and the offline edit queue.
 *
 * Every outgoing message gets the next session-monotonic seq at send time.
 * While disconnected, control edits queue locally (a visible warning is the
 * UI's job via `queuedCount`); audio is not queued — the service paces
 * generation by received audio, so stale audio after a reconnect is useless.
 */

import type { ClientMessage, ServerMessage } from "./protocol.js";
import { parseServerMessage } from "./protocol.js";

/** Minimal socket surface so tests can inject a fake. */
export interface SocketLike {
  readonly readyState: number; // WebSocket.OPEN === 1
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onopen: (() => void) | null;
}

/** Distributes Omit over the message union so each variant keeps its fields. */
type Unsequenced<T> = T extends ClientMessage ? Omit<T, "seq"> : never;

export class SteeringClient {
  private socket: SocketLike | null = null;
  private nextSeq = 0;
  private queue: Unsequenced<ClientMessage>[] = [];
  private started = false;
  onMessage: ((msg: ServerMessage) => void) | null = null;
  onDisconnect: (() => void) | null = null;

  get queuedCount(): number {
    return this.queue.length;
  }

  get connected(): boolean {
    return this.socket !== null && this.socket.readyState === 1;
  }

  attach(socket: SocketLike): void {
    this.socket = socket;
    socket.onmessage = (ev) => {
      if (this.onMessage) this.onMessage(parseServerMessage(ev.data));
    };
    socket.onclose = () => {
      this.socket = null;
      if (this.onDisconnect) this.onDisconnect();
    };
    if (socket.readyState === 1) this.flush();
    else socket.onopen = () => this.flush();
  }

  /** Send (or queue) a message; seq is assigned in actual send order. */
  send(msg: Unsequenced<ClientMessage>): void {
    if (msg.type === "start_session") this.started = true;
    else if (!this.started) {
      throw new Error("start_session must be the first message");
    }
    this.queue.push(msg);
    this.flush();
  }

  private flush(): void {
    if (!this.connected) return;
    while (this.queue.length > 0) {
      const msg = this.queue.shift()!;
      this.socket!.send(JSON.stringify({ ...msg, seq: this.nextSeq++ }));
    }
  }

  close(): void {
    this.socket?.close();
    this.socket = null;
  }
}
