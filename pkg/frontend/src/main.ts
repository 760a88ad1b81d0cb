/**
 * Application wiring: connect to the streaming service, feed it a local audio
 * file per character, and run the edit→watch steering loop.
 *
 * Single-threaded event loop: websocket callbacks reduce into `state`, the
 * render loop reads it at display rate, and user input goes through the
 * debounced editors. No state lives outside `state` + the editor models, so
 * everything on screen is reconstructible from the message log.
 */

import { SteeringClient } from "./client.js";
import { encodeF32 } from "./protocol.js";
import { initialState, reduce, type SessionState } from "./state.js";
import {
  type CanvasMapping,
  Debouncer,
  pxToMeters,
  WaypointEditor,
} from "./waypoints.js";
import { drawSkeletons, drawTopDown } from "./render.js";

const DEBOUNCE_MS = 100; // ≤ 10 Hz control messages

function $<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function start(): void {
  const topCanvas = $<HTMLCanvasElement>("topdown");
  const sideCanvas = $<HTMLCanvasElement>("skeleton");
  const map: CanvasMapping = {
    originPx: [topCanvas.width / 2, topCanvas.height / 2],
    pixelsPerMeter: 80,
  };

  let state: SessionState = initialState();
  let playing = true;
  let playhead = 0;

  const client = new SteeringClient();
  const editors = { A: new WaypointEditor("A"), B: new WaypointEditor("B") };
  const debouncers = { A: new Debouncer(DEBOUNCE_MS), B: new Debouncer(DEBOUNCE_MS) };
  let activeCharacter: "A" | "B" = "A";
  let alpha = 0.5;

  const sendTrajectory = (c: "A" | "B") => {
    debouncers[c].schedule(() => {
      if (!client.connected) $<HTMLElement>("warning").textContent = "disconnected — edit queued";
      client.send(editors[c].toMessage(0, alpha));
    });
  };

  client.onMessage = (msg) => {
    state = reduce(state, msg);
  };
  client.onDisconnect = () => {
    $<HTMLElement>("warning").textContent = "disconnected";
  };

  const url = `ws://${location.host}/session`;
  client.attach(new WebSocket(url) as never);
  client.send({ type: "start_session", fps: 30, alpha, gamma: 1.0 });

  // ------------------------------------------------------------ interactions
  topCanvas.addEventListener("click", (ev) => {
    const rect = topCanvas.getBoundingClientRect();
    editors[activeCharacter].add(
      pxToMeters(map, [ev.clientX - rect.left, ev.clientY - rect.top]),
    );
    sendTrajectory(activeCharacter);
  });
  $<HTMLSelectElement>("character").addEventListener("change", (ev) => {
    activeCharacter = (ev.target as HTMLSelectElement).value as "A" | "B";
  });
  $<HTMLInputElement>("alpha").addEventListener("input", (ev) => {
    alpha = Number((ev.target as HTMLInputElement).value);
    sendTrajectory(activeCharacter);
  });
  $<HTMLInputElement>("gamma").addEventListener("input", (ev) => {
    client.send({ type: "guidance_control", gamma: Number((ev.target as HTMLInputElement).value) });
  });
  $<HTMLInputElement>("mask").addEventListener("change", (ev) => {
    client.send({ type: "mask_control", masked: (ev.target as HTMLInputElement).checked });
  });
  $<HTMLButtonElement>("pause").addEventListener("click", () => {
    playing = !playing;
  });
  $<HTMLInputElement>("audio-a").addEventListener("change", (ev) => loadAudio(ev, "A"));
  $<HTMLInputElement>("audio-b").addEventListener("change", (ev) => loadAudio(ev, "B"));

  async function loadAudio(ev: Event, character: "A" | "B"): Promise<void> {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const audioCtx = new AudioContext();
    const decoded = await audioCtx.decodeAudioData(await file.arrayBuffer());
    const mono = decoded.getChannelData(0);
    // 1-second chunks keep individual websocket messages small
    const chunk = decoded.sampleRate;
    for (let i = 0; i < mono.length; i += chunk) {
      client.send({
        type: "audio_chunk",
        character,
        pcm: encodeF32(mono.subarray(i, Math.min(i + chunk, mono.length)) as Float32Array),
        sample_rate: decoded.sampleRate,
        timestamp: i / decoded.sampleRate,
      });
    }
  }

  // ------------------------------------------------------------- render loop
  const frame = () => {
    if (playing && playhead < state.frames.length - 1) playhead++;
    drawTopDown(topCanvas, state, editors, map);
    drawSkeletons(sideCanvas, state, playhead);
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

start();
