/**
 * Client-side mirror of the teleoperation session.
 *
 * The UI phase always reflects the last server state message; previews go
 * stale the moment a target is edited, and Confirm stays disabled while
 * the preview is stale or an endpoint is flagged (or locally computed)
 * unreachable — the server enforces the same rules, this is the
 * client-side half of the dual enforcement.
 */

import {
  ErrorMessage,
  Phase,
  ServerMessage,
  StateMessage,
  VerdictMessage,
  describeError,
} from "./protocol";
import { ClientReachMap } from "./reachmap";

export interface SessionEvents {
  onPhase?: (phase: Phase) => void;
  onState?: (msg: StateMessage) => void;
  onVerdict?: (msg: VerdictMessage) => void;
  onError?: (code: string, text: string) => void;
  onReachMap?: (map: ClientReachMap) => void;
}

export class ClientSession {
  phase: Phase = "idle";
  lastState: StateMessage | null = null;
  lastVerdict: VerdictMessage | null = null;
  lastError: ErrorMessage | null = null;
  reachMaps: ClientReachMap[] = [];
  /** endpoints the operator aimed, world frame */
  softEndpoint: [number, number, number] | null = null;
  rigidEndpoint: [number, number, number] | null = null;
  previewStale = false;
  unreachableFlagged = false;

  constructor(private events: SessionEvents = {}) {}

  handleMessage(msg: ServerMessage): void {
    switch (msg.type) {
      case "state": {
        const prev = this.phase;
        this.lastState = msg;
        this.phase = msg.phase;
        if (msg.phase === "preview_ready" && prev === "previewing") {
          this.previewStale = false;
        }
        if (msg.phase === "idle" || msg.phase === "target_set") {
          // leaving a preview-bearing phase invalidates the old ghost
          if (prev === "preview_ready" || prev === "done") {
            this.previewStale = true;
          }
        }
        this.events.onPhase?.(this.phase);
        this.events.onState?.(msg);
        break;
      }
      case "verdict": {
        this.lastVerdict = msg;
        if (msg.preview_frames) this.previewStale = false;
        this.events.onVerdict?.(msg);
        break;
      }
      case "error": {
        this.lastError = msg;
        if (msg.code.startsWith("unreachable")) {
          this.unreachableFlagged = true;
        }
        this.events.onError?.(msg.code, describeError(msg.code, msg.message));
        break;
      }
      case "reach_map": {
        const map = new ClientReachMap(msg);
        this.reachMaps.push(map);
        this.events.onReachMap?.(map);
        break;
      }
    }
  }

  /** Call whenever the operator edits a ray (before/with the send). */
  noteRayEdited(hand: "left" | "right",
                endpoint: [number, number, number]): void {
    if (hand === "left") this.rigidEndpoint = endpoint;
    else this.softEndpoint = endpoint;
    this.previewStale = true;
    this.unreachableFlagged = false;
  }

  /**
   * Local reachability hint for the soft endpoint against the streamed
   * voxel maps (world-frame approximation: the overlay is recolored by
   * the server on gravity changes; tool-down teleoperation keeps the
   * mount frame axis-aligned so a translated lookup is representative).
   */
  softEndpointLocallyReachable(): boolean | null {
    if (this.softEndpoint === null || this.reachMaps.length === 0) return null;
    if (this.rigidEndpoint === null) return null;
    const m = this.reachMaps[0];
    const local: [number, number, number] = [
      this.softEndpoint[0] - this.rigidEndpoint[0],
      this.softEndpoint[1] - this.rigidEndpoint[1],
      this.softEndpoint[2] - this.rigidEndpoint[2],
    ];
    // mount z points down: arm frame z is the world drop distance
    const armFrame: [number, number, number] = [
      Math.hypot(local[0], local[1]),
      0,
      -local[2],
    ];
    return m.contains(armFrame);
  }

  get canAimRays(): boolean {
    return ["idle", "target_set", "preview_ready"].includes(this.phase);
  }

  get canPreview(): boolean {
    return this.phase === "target_set" || this.phase === "preview_ready";
  }

  get canConfirm(): boolean {
    if (this.phase !== "preview_ready") return false;
    if (this.previewStale) return false;
    if (this.unreachableFlagged) return false;
    const local = this.softEndpointLocallyReachable();
    if (local === false) return false;
    return true;
  }

  get canAbort(): boolean {
    return this.phase === "previewing" || this.phase === "preview_ready";
  }

  get editingLocked(): boolean {
    return this.phase === "executing" || this.phase === "previewing";
  }
}
