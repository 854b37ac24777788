/**
 * three.js rendering: the executing arm as opaque capsule-like segments,
 * the preview ghost semi-transparent (dimmed further when stale), the
 * reachability overlay as a translucent voxel shell, and the two aiming
 * rays.  World z-up is mapped to the three.js y-up view.
 */

import * as THREE from "three";

import type { Renderer } from "./app";
import type { Hand, PreviewFrame, SegmentPose, StateMessage } from "./protocol";
import type { ClientReachMap } from "./reachmap";

const SEG_BASE_RADIUS = 0.016;
const SEG_TAPER = 0.85;

function toView(p: ArrayLike<number>): THREE.Vector3 {
  // world (x, y, z-up) -> view (x, z, -y) keeps a right-handed y-up scene
  return new THREE.Vector3(p[0], p[2], -p[1]);
}

class ArmMeshes {
  group = new THREE.Group();
  private segments: THREE.Mesh[] = [];

  constructor(scene: THREE.Scene, color: number, opacity: number,
              count = 18) {
    const mat = new THREE.MeshStandardMaterial({
      color,
      transparent: opacity < 1,
      opacity,
      roughness: 0.55,
    });
    for (let i = 0; i < count; i++) {
      const r = SEG_BASE_RADIUS * Math.pow(SEG_TAPER, i);
      const geo = new THREE.CapsuleGeometry(r, 0.02, 4, 10);
      const mesh = new THREE.Mesh(geo, mat);
      mesh.visible = false;
      this.segments.push(mesh);
      this.group.add(mesh);
    }
    scene.add(this.group);
  }

  setOpacity(opacity: number): void {
    for (const m of this.segments) {
      const mat = m.material as THREE.MeshStandardMaterial;
      mat.opacity = opacity;
      mat.transparent = opacity < 1;
    }
  }

  update(poses: SegmentPose[]): void {
    this.segments.forEach((mesh, i) => {
      const pose = poses[i];
      if (!pose) {
        mesh.visible = false;
        return;
      }
      mesh.visible = true;
      mesh.position.copy(toView(pose.p));
      const [w, x, y, z] = pose.q;
      // world quaternion, then basis change and capsule-axis alignment
      const qWorld = new THREE.Quaternion(x, -z, y, w);
      const tilt = new THREE.Quaternion().setFromAxisAngle(
        new THREE.Vector3(1, 0, 0), Math.PI / 2);
      mesh.quaternion.copy(qWorld.multiply(tilt));
    });
  }

  hide(): void {
    for (const m of this.segments) m.visible = false;
  }
}

export class ThreeRenderer implements Renderer {
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private glr: THREE.WebGLRenderer;
  private arm: ArmMeshes;
  private ghost: ArmMeshes;
  private rays: Record<Hand, THREE.Line>;
  private rayTips: Record<Hand, THREE.Mesh>;
  private voxels: THREE.InstancedMesh | null = null;
  private ghostFrames: PreviewFrame[] = [];
  private ghostIndex = 0;
  private playing = true;

  constructor(private canvas: HTMLCanvasElement) {
    this.glr = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.glr.setSize(canvas.clientWidth, canvas.clientHeight, false);
    this.scene.background = new THREE.Color(0x10141a);
    this.camera = new THREE.PerspectiveCamera(
      50, canvas.clientWidth / canvas.clientHeight, 0.01, 20);
    this.camera.position.set(1.4, 1.1, 1.4);
    this.camera.lookAt(0.3, 0.4, 0);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.45));
    const sun = new THREE.DirectionalLight(0xffffff, 1.1);
    sun.position.set(2, 3, 1);
    this.scene.add(sun);
    this.scene.add(new THREE.GridHelper(3, 30, 0x2a3442, 0x1a222c));

    this.arm = new ArmMeshes(this.scene, 0xdd8844, 1.0);
    this.ghost = new ArmMeshes(this.scene, 0x44bbee, 0.45);

    const mkRay = (color: number) => {
      const geo = new THREE.BufferGeometry().setFromPoints([
        new THREE.Vector3(), new THREE.Vector3(),
      ]);
      return new THREE.Line(geo,
        new THREE.LineBasicMaterial({ color }));
    };
    const mkTip = (color: number) => {
      const mesh = new THREE.Mesh(
        new THREE.SphereGeometry(0.012, 12, 8),
        new THREE.MeshBasicMaterial({ color }));
      this.scene.add(mesh);
      return mesh;
    };
    this.rays = { left: mkRay(0xffee66), right: mkRay(0x66ff99) };
    this.rayTips = { left: mkTip(0xffee66), right: mkTip(0x66ff99) };
    this.scene.add(this.rays.left, this.rays.right);

    const loop = () => {
      requestAnimationFrame(loop);
      this.stepGhost();
      this.glr.render(this.scene, this.camera);
    };
    loop();
  }

  private stepGhost(): void {
    if (!this.playing || this.ghostFrames.length === 0) return;
    this.ghostIndex = (this.ghostIndex + 1) % this.ghostFrames.length;
    this.ghost.update(this.ghostFrames[this.ghostIndex].segments);
  }

  scrubGhost(fraction: number): void {
    if (this.ghostFrames.length === 0) return;
    this.playing = false;
    this.ghostIndex = Math.min(
      this.ghostFrames.length - 1,
      Math.floor(fraction * this.ghostFrames.length));
    this.ghost.update(this.ghostFrames[this.ghostIndex].segments);
  }

  updateArm(state: StateMessage): void {
    this.arm.update(state.soft_segments);
  }

  showPreviewGhost(frames: PreviewFrame[], stale: boolean): void {
    this.ghostFrames = frames;
    this.ghostIndex = 0;
    this.playing = true;
    this.ghost.setOpacity(stale ? 0.15 : 0.45);
  }

  clearPreviewGhost(): void {
    this.ghostFrames = [];
    this.ghost.hide();
  }

  showReachMap(map: ClientReachMap): void {
    if (this.voxels) this.scene.remove(this.voxels);
    const centers = map.occupiedCenters();
    const geo = new THREE.BoxGeometry(
      map.voxelSize, map.voxelSize, map.voxelSize);
    const mat = new THREE.MeshBasicMaterial({
      color: 0x3366aa, transparent: true, opacity: 0.08, depthWrite: false,
    });
    const inst = new THREE.InstancedMesh(geo, mat, centers.length);
    const m = new THREE.Matrix4();
    centers.forEach((c, i) => {
      m.setPosition(toView(c));
      inst.setMatrixAt(i, m);
    });
    this.voxels = inst;
    this.scene.add(inst);
  }

  updateRay(hand: Hand, origin: number[], endpoint: number[]): void {
    const pts = [toView(origin), toView(endpoint)];
    this.rays[hand].geometry.setFromPoints(pts);
    this.rayTips[hand].position.copy(pts[1]);
  }

  setConnected(connected: boolean): void {
    this.canvas.style.opacity = connected ? "1" : "0.35";
  }
}
