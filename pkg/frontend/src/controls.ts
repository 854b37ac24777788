/**
 * Ray aiming: dragging orients the active ray, the wheel adjusts its
 * length one centimeter per notch, and outgoing set_ray messages are
 * throttled to at most 30 per second (trailing edge wins).
 */

import { Hand, RAY_LENGTH_MAX, RAY_LENGTH_MIN, SetRayMessage } from "./protocol";

export interface RayState {
  origin: [number, number, number];
  direction: [number, number, number];
  length: number;
}

const WHEEL_STEP = 0.01;
const THROTTLE_MS = 1000 / 30;

function normalize(v: [number, number, number]): [number, number, number] {
  const n = Math.hypot(v[0], v[1], v[2]);
  if (n < 1e-12) return [0, 0, -1];
  return [v[0] / n, v[1] / n, v[2] / n];
}

export class RayController {
  rays: Record<Hand, RayState> = {
    left: { origin: [0.3, 0.0, 1.0], direction: [0, 0, -1], length: 0.5 },
    right: { origin: [0.5, 0.0, 1.0], direction: [0, 0, -1], length: 0.5 },
  };
  active: Hand = "left";
  private lastSent: Record<Hand, number> = { left: 0, right: 0 };
  private pending: Partial<Record<Hand, ReturnType<typeof setTimeout>>> = {};

  constructor(
    private send: (msg: SetRayMessage) => boolean,
    private onLocalChange?: (hand: Hand, endpoint: [number, number, number]) => void,
    private now: () => number = () => Date.now(),
  ) {}

  endpoint(hand: Hand): [number, number, number] {
    const r = this.rays[hand];
    return [
      r.origin[0] + r.length * r.direction[0],
      r.origin[1] + r.length * r.direction[1],
      r.origin[2] + r.length * r.direction[2],
    ];
  }

  /** Azimuth/elevation drag, radians; reorients the active ray. */
  drag(hand: Hand, yaw: number, pitch: number): void {
    const cp = Math.cos(pitch);
    this.rays[hand].direction = normalize([
      cp * Math.cos(yaw),
      cp * Math.sin(yaw),
      -Math.abs(Math.sin(pitch)) - 0.05,
    ]);
    this.queueSend(hand);
  }

  setOrigin(hand: Hand, origin: [number, number, number]): void {
    this.rays[hand].origin = origin;
    this.queueSend(hand);
  }

  /** One wheel notch = +-1 cm of ray length, clamped to the legal range. */
  wheel(hand: Hand, notches: number): void {
    const r = this.rays[hand];
    r.length = Math.min(
      RAY_LENGTH_MAX,
      Math.max(RAY_LENGTH_MIN, r.length + notches * WHEEL_STEP),
    );
    this.queueSend(hand);
  }

  aimAt(hand: Hand, target: [number, number, number]): void {
    const r = this.rays[hand];
    const d: [number, number, number] = [
      target[0] - r.origin[0],
      target[1] - r.origin[1],
      target[2] - r.origin[2],
    ];
    r.length = Math.min(RAY_LENGTH_MAX,
                        Math.max(RAY_LENGTH_MIN, Math.hypot(...d)));
    r.direction = normalize(d);
    this.queueSend(hand);
  }

  private queueSend(hand: Hand): void {
    this.onLocalChange?.(hand, this.endpoint(hand));
    const elapsed = this.now() - this.lastSent[hand];
    if (elapsed >= THROTTLE_MS) {
      this.flush(hand);
      return;
    }
    if (this.pending[hand] !== undefined) return;
    this.pending[hand] = setTimeout(() => {
      delete this.pending[hand];
      this.flush(hand);
    }, THROTTLE_MS - elapsed);
  }

  private flush(hand: Hand): void {
    const r = this.rays[hand];
    const sent = this.send({
      type: "set_ray",
      hand,
      origin: r.origin,
      direction: r.direction,
      length: r.length,
    });
    if (sent) this.lastSent[hand] = this.now();
  }
}
