/** Client-side copy of a reachability voxel map, for endpoint hinting. */

import type { ReachMapMessage } from "./protocol";

export class ClientReachMap {
  readonly gravityAngleDeg: number | null;
  readonly voxelSize: number;
  readonly origin: [number, number, number];
  readonly dims: [number, number, number];
  private readonly bits: Uint8Array;

  constructor(msg: ReachMapMessage) {
    this.gravityAngleDeg = msg.gravity_angle_deg;
    this.voxelSize = msg.voxel_size;
    this.origin = msg.origin;
    this.dims = msg.dims;
    this.bits = decodeBase64(msg.occupancy_b64);
  }

  private bitAt(flat: number): boolean {
    const byte = this.bits[flat >> 3];
    if (byte === undefined) return false;
    // numpy packbits: most significant bit first
    return (byte & (0x80 >> (flat & 7))) !== 0;
  }

  contains(p: [number, number, number]): boolean {
    const idx: number[] = [];
    for (let a = 0; a < 3; a++) {
      const i = Math.round((p[a] - this.origin[a]) / this.voxelSize);
      if (i < 0 || i >= this.dims[a]) return false;
      idx.push(i);
    }
    const flat = (idx[0] * this.dims[1] + idx[1]) * this.dims[2] + idx[2];
    return this.bitAt(flat);
  }

  /** Centers of occupied voxels (for the translucent overlay). */
  occupiedCenters(): Array<[number, number, number]> {
    const out: Array<[number, number, number]> = [];
    const [nx, ny, nz] = this.dims;
    let flat = 0;
    for (let i = 0; i < nx; i++) {
      for (let j = 0; j < ny; j++) {
        for (let k = 0; k < nz; k++, flat++) {
          if (this.bitAt(flat)) {
            out.push([
              this.origin[0] + i * this.voxelSize,
              this.origin[1] + j * this.voxelSize,
              this.origin[2] + k * this.voxelSize,
            ]);
          }
        }
      }
    }
    return out;
  }
}

function decodeBase64(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  // node (vitest) path
  return new Uint8Array(Buffer.from(b64, "base64"));
}
