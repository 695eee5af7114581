/**
 * Wire protocol: newline-delimited JSON over stdio.
 *
 * Handshake:  {"type":"hello","version":1} -> {"type":"model","n_vocab":N,"name":...}
 * Per step:   {"type":"next","prefix":[ids...]} ->
 *             {"type":"dist","probs_sparse":[[id,prob],...],"rest_mass":r}
 * Shutdown:   {"type":"bye"}
 * Failures are answered with {"type":"error","message":...}.
 */

export const PROTOCOL_VERSION = 1;

export interface HelloRequest {
  type: 'hello';
  version: number;
}

export interface NextRequest {
  type: 'next';
  prefix: number[];
}

export interface ByeRequest {
  type: 'bye';
}

export type Request = HelloRequest | NextRequest | ByeRequest;

export interface ModelReply {
  type: 'model';
  n_vocab: number;
  name: string;
}

export interface DistReply {
  type: 'dist';
  probs_sparse: [number, number][];
  rest_mass: number;
}

export interface ErrorReply {
  type: 'error';
  message: string;
}

export type Reply = ModelReply | DistReply | ErrorReply;

/** Sparse top-M view of a dense probability row plus the leftover mass. */
export function sparsify(probs: Float64Array, topM: number): DistReply {
  const order = Array.from(probs.keys()).sort((a, b) => probs[b] - probs[a] || a - b);
  const kept = order.slice(0, Math.min(topM, probs.length));
  const sparse: [number, number][] = kept.map((id) => [id, probs[id]]);
  let keptMass = 0;
  for (const [, p] of sparse) keptMass += p;
  const rest = Math.max(0, 1 - keptMass);
  return { type: 'dist', probs_sparse: sparse, rest_mass: rest };
}
