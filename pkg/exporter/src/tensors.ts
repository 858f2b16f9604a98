/**
 * Binary tensor files for dataset bundles: magic "MMOR", u32 format version,
 * u32 rank, rank x u64 dims, then the payload (little-endian float64, or u8
 * for sentiment codes).
 */

export const FORMAT_MAGIC = "MMOR";
export const FORMAT_VERSION = 1;

function header(dims: number[]): Buffer {
  const buf = Buffer.alloc(4 + 4 + 4 + 8 * dims.length);
  buf.write(FORMAT_MAGIC, 0, "ascii");
  buf.writeUInt32LE(FORMAT_VERSION, 4);
  buf.writeUInt32LE(dims.length, 8);
  dims.forEach((d, i) => buf.writeBigUInt64LE(BigInt(d), 12 + 8 * i));
  return buf;
}

export function packFloat64(dims: number[], values: Float64Array): Buffer {
  const count = dims.reduce((a, b) => a * b, 1);
  if (values.length !== count) {
    throw new Error(`tensor payload holds ${values.length} values, dims [${dims}] need ${count}`);
  }
  const payload = Buffer.alloc(8 * count);
  for (let i = 0; i < count; i++) {
    payload.writeDoubleLE(values[i], 8 * i);
  }
  return Buffer.concat([header(dims), payload]);
}

export function packUint8(dims: number[], values: Uint8Array): Buffer {
  const count = dims.reduce((a, b) => a * b, 1);
  if (values.length !== count) {
    throw new Error(`tensor payload holds ${values.length} values, dims [${dims}] need ${count}`);
  }
  return Buffer.concat([header(dims), Buffer.from(values)]);
}
