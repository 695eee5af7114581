/**
 * Replay-file writer.
 *
 * Layout (little-endian): magic "MIRO", u32 version = 1, u32 n_vocab,
 * u32 n_steps, then n_steps u32 token ids, then n_steps rows of n_vocab
 * float32 probabilities.  Rows must be normalized before rounding; float32
 * rounding keeps them within the reader's 1e-6 tolerance.
 */

import { writeFileSync } from 'node:fs';

export const REPLAY_MAGIC = 'MIRO';
export const REPLAY_VERSION = 1;

export function encodeReplay(
  nVocab: number,
  tokens: readonly number[],
  rows: readonly Float64Array[],
): Buffer {
  if (rows.length !== tokens.length) {
    throw new Error(`got ${rows.length} rows for ${tokens.length} tokens`);
  }
  const headerSize = 16;
  const buffer = Buffer.alloc(headerSize + 4 * tokens.length + 4 * nVocab * rows.length);
  buffer.write(REPLAY_MAGIC, 0, 'ascii');
  buffer.writeUInt32LE(REPLAY_VERSION, 4);
  buffer.writeUInt32LE(nVocab, 8);
  buffer.writeUInt32LE(tokens.length, 12);
  let offset = headerSize;
  for (const token of tokens) {
    if (!Number.isInteger(token) || token < 0 || token >= nVocab) {
      throw new Error(`token ${token} outside vocabulary of ${nVocab}`);
    }
    buffer.writeUInt32LE(token, offset);
    offset += 4;
  }
  for (const [index, row] of rows.entries()) {
    if (row.length !== nVocab) {
      throw new Error(`row ${index} has ${row.length} entries, expected ${nVocab}`);
    }
    let total = 0;
    for (const p of row) total += p;
    if (Math.abs(total - 1) > 1e-9) {
      throw new Error(`row ${index} sums to ${total}`);
    }
    for (const p of row) {
      buffer.writeFloatLE(p, offset);
      offset += 4;
    }
  }
  return buffer;
}

export function writeReplay(
  path: string,
  nVocab: number,
  tokens: readonly number[],
  rows: readonly Float64Array[],
): void {
  writeFileSync(path, encodeReplay(nVocab, tokens, rows));
}
