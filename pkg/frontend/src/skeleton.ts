/**
 * Skeleton definition parsing and forward kinematics for stick-figure
 * rendering. Mirrors the service's pose row layout:
 *
 *   row = [J x 6 rotation features][3 root world displacement][2 foot contacts]
 *
 * Rotation features are the first two columns of the joint's local rotation
 * matrix (orthonormalized on decode). The displacement block's first frame is
 * the absolute root position, so its running sum is the root world path.
 */

export interface Skeleton {
  names: string[];
  /** parent index per joint, -1 for the root */
  parents: number[];
  /** local rest offset from parent, [x, y, z] meters */
  offsets: [number, number, number][];
}

export function poseWidth(skel: Skeleton): number {
  return skel.names.length * 6 + 3 + 2;
}

/** Parse the `joint <name> <parent> <x> <y> <z> [marker]` text format. */
export function parseSkeleton(text: string): Skeleton {
  const names: string[] = [];
  const parents: number[] = [];
  const offsets: [number, number, number][] = [];
  for (const rawLine of text.split("\n")) {
    const line = rawLine.trim();
    if (!line || line.startsWith("#")) continue;
    const parts = line.split(/\s+/);
    if (parts[0] !== "joint" || parts.length < 6) {
      throw new Error(`bad skeleton line: ${line}`);
    }
    const [, name, parentName, xs, ys, zs] = parts;
    const off: [number, number, number] = [Number(xs), Number(ys), Number(zs)];
    if (off.some((v) => !Number.isFinite(v))) {
      throw new Error(`non-numeric offset in skeleton line: ${line}`);
    }
    let parent = -1;
    if (parentName !== "-") {
      parent = names.indexOf(parentName!);
      if (parent < 0) throw new Error(`unknown parent ${parentName} for joint ${name}`);
    }
    names.push(name!);
    parents.push(parent);
    offsets.push(off);
  }
  if (names.length === 0) throw new Error("empty skeleton definition");
  return { names, parents, offsets };
}

type Mat3 = [number, number, number, number, number, number, number, number, number];

/** Decode a 6-value rotation feature (two matrix columns) into a row-major 3x3. */
function rot6dToMatrix(r: ArrayLike<number>, base: number): Mat3 {
  let ax = r[base + 0]!, ay = r[base + 1]!, az = r[base + 2]!;
  let bx = r[base + 3]!, by = r[base + 4]!, bz = r[base + 5]!;
  const na = Math.hypot(ax, ay, az);
  if (na < 1e-8) throw new Error("degenerate rotation feature: zero first column");
  ax /= na; ay /= na; az /= na;
  const dot = ax * bx + ay * by + az * bz;
  bx -= dot * ax; by -= dot * ay; bz -= dot * az;
  const nb = Math.hypot(bx, by, bz);
  if (nb < 1e-8) throw new Error("degenerate rotation feature: parallel columns");
  bx /= nb; by /= nb; bz /= nb;
  const cx = ay * bz - az * by;
  const cy = az * bx - ax * bz;
  const cz = ax * by - ay * bx;
  // columns are x=(ax,ay,az), y=(bx,by,bz), z=(cx,cy,cz)
  return [ax, bx, cx, ay, by, cy, az, bz, cz];
}

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array(9) as Mat3;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[i * 3 + j] = (a[i * 3]! * b[j]! +
        a[i * 3 + 1]! * b[3 + j]! +
        a[i * 3 + 2]! * b[6 + j]!) as never;
    }
  }
  return out;
}

function matVec(m: Mat3, v: [number, number, number]): [number, number, number] {
  return [
    m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
    m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
    m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
  ];
}

/**
 * World joint positions for one pose row, given the root's accumulated world
 * position (running sum of the displacement block up to and including this
 * frame). Returns [J][x, y, z].
 */
export function jointPositions(
  skel: Skeleton,
  row: ArrayLike<number>,
  rootWorld: [number, number, number],
): [number, number, number][] {
  const J = skel.names.length;
  const worldRot: Mat3[] = new Array(J);
  const worldPos: [number, number, number][] = new Array(J);
  for (let j = 0; j < J; j++) {
    const local = rot6dToMatrix(row, j * 6);
    const p = skel.parents[j]!;
    if (p < 0) {
      worldRot[j] = local;
      worldPos[j] = [...rootWorld];
    } else {
      worldRot[j] = matMul(worldRot[p]!, local);
      const off = matVec(worldRot[p]!, skel.offsets[j]!);
      worldPos[j] = [
        worldPos[p]![0] + off[0],
        worldPos[p]![1] + off[1],
        worldPos[p]![2] + off[2],
      ];
    }
  }
  return worldPos;
}

/** Root displacement block of a pose row: [dx, dy, dz]. */
export function rootDisplacement(skel: Skeleton, row: ArrayLike<number>): [number, number, number] {
  const base = skel.names.length * 6;
  return [row[base]!, row[base + 1]!, row[base + 2]!];
}
