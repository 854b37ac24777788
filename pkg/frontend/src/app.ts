/**
 * Operator console core: wires the socket, the session mirror, the ray
 * controls and the DOM panel together.  Rendering (three.js) is injected
 * so this module runs headless under tests.
 */

import { RayController } from "./controls";
import {
  Hand,
  PreviewFrame,
  StateMessage,
  VerdictMessage,
} from "./protocol";
import { ClientReachMap } from "./reachmap";
import { ClientSession } from "./session";
import { ConnectionState, ConsoleSocket, SocketFactory } from "./socket";

export interface Renderer {
  updateArm(state: StateMessage): void;
  showPreviewGhost(frames: PreviewFrame[], stale: boolean): void;
  clearPreviewGhost(): void;
  showReachMap(map: ClientReachMap): void;
  updateRay(hand: Hand, origin: number[], endpoint: number[]): void;
  setConnected(connected: boolean): void;
}

export interface AppElements {
  phaseBadge: HTMLElement;
  verdictBanner: HTMLElement;
  errorBanner: HTMLElement;
  connBanner: HTMLElement;
  btnPreview: HTMLButtonElement;
  btnConfirm: HTMLButtonElement;
  btnAbort: HTMLButtonElement;
  btnReset: HTMLButtonElement;
}

export class ConsoleApp {
  session: ClientSession;
  socket: ConsoleSocket;
  rays: RayController;
  scrubFrames: PreviewFrame[] = [];

  constructor(
    url: string,
    private el: AppElements,
    private renderer: Renderer | null = null,
    factory?: SocketFactory,
  ) {
    this.session = new ClientSession({
      onPhase: () => this.refreshControls(),
      onState: (msg) => this.onState(msg),
      onVerdict: (msg) => this.onVerdict(msg),
      onError: (_code, text) => this.showError(text),
      onReachMap: (map) => this.renderer?.showReachMap(map),
    });
    this.socket = new ConsoleSocket({
      url,
      onMessage: (msg) => this.session.handleMessage(msg),
      onStateChange: (s) => this.onConnection(s),
      factory,
    });
    this.rays = new RayController(
      (msg) => {
        if (!this.session.canAimRays || this.session.editingLocked) {
          return false;
        }
        return this.socket.send(msg);
      },
      (hand, endpoint) => {
        // staleness must track the *local* edit, not the throttled send
        if (this.session.canAimRays && !this.session.editingLocked) {
          this.session.noteRayEdited(hand, endpoint);
          this.renderer?.updateRay(hand, this.rays.rays[hand].origin, endpoint);
          this.refreshControls();
        }
      },
    );
    this.wireButtons();
    this.refreshControls();
  }

  connect(): void {
    this.socket.connect();
  }

  private wireButtons(): void {
    this.el.btnPreview.addEventListener("click", () => {
      if (this.session.canPreview) this.socket.send({ type: "preview" });
    });
    this.el.btnConfirm.addEventListener("click", () => {
      if (this.session.canConfirm) this.socket.send({ type: "confirm" });
    });
    this.el.btnAbort.addEventListener("click", () => {
      if (this.session.canAbort) this.socket.send({ type: "abort" });
    });
    this.el.btnReset.addEventListener("click", () => {
      this.socket.send({ type: "reset" });
    });
  }

  private onState(msg: StateMessage): void {
    this.renderer?.updateArm(msg);
    if (msg.phase === "idle" || msg.phase === "target_set") {
      this.renderer?.clearPreviewGhost();
    }
    this.refreshControls();
  }

  private onVerdict(msg: VerdictMessage): void {
    if (msg.preview_frames !== undefined) {
      this.scrubFrames = msg.preview_frames;
      this.renderer?.showPreviewGhost(msg.preview_frames, false);
    }
    const bits: string[] = [];
    if (msg.e_internal_preview_exec_m !== undefined) {
      bits.push(
        `preview vs executed: ${(msg.e_internal_preview_exec_m * 1000).toFixed(2)} mm`,
      );
    }
    bits.push(msg.grasped ? "GRASPED" : `no grasp (${msg.reason ?? "miss"})`);
    this.el.verdictBanner.textContent = bits.join(" — ");
    this.el.verdictBanner.dataset.grasped = String(msg.grasped);
    this.refreshControls();
  }

  private onConnection(state: ConnectionState): void {
    const connected = state === "connected";
    this.el.connBanner.textContent = connected
      ? "connected"
      : state === "connecting"
        ? "connecting..."
        : "disconnected — retrying";
    this.el.connBanner.dataset.state = state;
    this.renderer?.setConnected(connected);
    this.refreshControls();
  }

  private showError(text: string): void {
    this.el.errorBanner.textContent = text;
    this.el.errorBanner.dataset.visible = "true";
    this.refreshControls();
  }

  refreshControls(): void {
    const s = this.session;
    const connected = this.socket.state === "connected";
    this.el.phaseBadge.textContent = s.phase;
    this.el.phaseBadge.dataset.phase = s.phase;
    this.el.btnPreview.disabled = !connected || !s.canPreview;
    this.el.btnConfirm.disabled = !connected || !s.canConfirm;
    this.el.btnAbort.disabled = !connected || !s.canAbort;
    this.el.btnReset.disabled = !connected;
    if (s.previewStale && this.scrubFrames.length > 0) {
      this.renderer?.showPreviewGhost(this.scrubFrames, true);
    }
  }
}
