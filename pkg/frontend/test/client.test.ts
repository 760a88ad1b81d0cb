import { describe, expect, it } from "vitest";
import { SteeringClient, type SocketLike } from "../src/client.js";

class FakeSocket implements SocketLike {
  readyState = 1;
  sent: string[] = [];
  onmessage: ((ev: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;
  onopen: (() => void) | null = null;
  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.readyState = 3;
    this.onclose?.();
  }
  open(): void {
    this.readyState = 1;
    this.onopen?.();
  }
}

describe("steering client", () => {
  it("assigns strictly increasing seq numbers in send order", () => {
    const sock = new FakeSocket();
    const client = new SteeringClient();
    client.attach(sock);
    client.send({ type: "start_session", fps: 30 });
    client.send({ type: "mask_control", masked: true });
    client.send({ type: "guidance_control", gamma: 2 });
    const seqs = sock.sent.map((s) => JSON.parse(s).seq);
    expect(seqs).toEqual([0, 1, 2]);
  });

  it("requires start_session before anything else", () => {
    const client = new SteeringClient();
    client.attach(new FakeSocket());
    expect(() => client.send({ type: "mask_control", masked: true })).toThrow(/start_session/);
  });

  it("queues edits while disconnected and flushes in order on reconnect", () => {
    const client = new SteeringClient();
    let warnings = 0;
    client.onDisconnect = () => warnings++;

    const first = new FakeSocket();
    client.attach(first);
    client.send({ type: "start_session" });
    first.close();
    expect(warnings).toBe(1);

    client.send({ type: "mask_control", masked: true });
    client.send({ type: "guidance_control", gamma: 3 });
    expect(client.queuedCount).toBe(2);

    const second = new FakeSocket();
    second.readyState = 0; // CONNECTING
    client.attach(second);
    expect(second.sent.length).toBe(0);
    second.open();
    const parsed = second.sent.map((s) => JSON.parse(s));
    expect(parsed.map((m) => m.type)).toEqual(["mask_control", "guidance_control"]);
    // seq continues the session-monotonic count across the queue
    expect(parsed.map((m) => m.seq)).toEqual([1, 2]);
    expect(client.queuedCount).toBe(0);
  });

  it("parses incoming envelopes and hands them to onMessage", () => {
    const sock = new FakeSocket();
    const client = new SteeringClient();
    const got: string[] = [];
    client.onMessage = (m) => got.push(m.type);
    client.attach(sock);
    sock.onmessage?.({ data: '{"type": "stall", "have_frames": 1, "need_frames": 45}' });
    expect(got).toEqual(["stall"]);
    expect(() => sock.onmessage?.({ data: "garbage" })).toThrow(/JSON/);
  });

  it("trajectory messages carry the drawn waypoints verbatim", () => {
    const sock = new FakeSocket();
    const client = new SteeringClient();
    client.attach(sock);
    client.send({ type: "start_session" });
    client.send({
      type: "trajectory_control",
      character: "A",
      waypoints: [[0, 0], [2, 0]],
      alpha: 1.0,
    });
    const msg = JSON.parse(sock.sent[1]!);
    expect(msg.waypoints).toEqual([[0, 0], [2, 0]]);
    expect(msg.alpha).toBe(1.0);
    expect(msg.character).toBe("A");
  });
});
