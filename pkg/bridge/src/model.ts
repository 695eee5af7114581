/**
 * Language-model backends.
 *
 * A backend exposes the full next-token distribution for a prefix, with
 * exact log-probabilities, so exported replays and served distributions can
 * be checked against the model's own scores.  The built-in `fixture` backend
 * is a seeded, context-dependent synthetic model: a rank-law base shape
 * perturbed per (context, token) by an integer hash.  Adapters for real
 * checkpoint-backed models implement the same interface.
 */

export interface LanguageModel {
  readonly nVocab: number;
  readonly name: string;
  /** Dense probability row over token ids, conditioned on the prefix. */
  probs(prefix: readonly number[]): Float64Array;
}

/** 64-bit-ish integer mix (splitmix-style) over 32-bit lanes. */
function mix32(h: number): number {
  h = Math.imul(h ^ (h >>> 16), 0x45d9f3b);
  h = Math.imul(h ^ (h >>> 16), 0x45d9f3b);
  return (h ^ (h >>> 16)) >>> 0;
}

const CONTEXT_ORDER = 3;

export class FixtureLm implements LanguageModel {
  readonly nVocab: number;
  readonly name: string;
  private readonly seed: number;
  private readonly base: Float64Array;

  constructor(seed: number, nVocab: number) {
    if (!Number.isInteger(nVocab) || nVocab < 2) {
      throw new Error(`fixture model needs an integer vocabulary >= 2, got ${nVocab}`);
    }
    this.seed = seed >>> 0;
    this.nVocab = nVocab;
    this.name = `fixture-${seed}-${nVocab}`;
    this.base = new Float64Array(nVocab);
    for (let i = 0; i < nVocab; i++) {
      this.base[i] = -1.1 * Math.log(i + 1);
    }
  }

  probs(prefix: readonly number[]): Float64Array {
    let ctx = mix32(this.seed ^ 0x9e3779b9);
    const start = Math.max(0, prefix.length - CONTEXT_ORDER);
    for (let i = start; i < prefix.length; i++) {
      ctx = mix32(ctx ^ Math.imul(prefix[i] + 0x7f4a7c15, 0x85ebca6b));
    }
    const logits = new Float64Array(this.nVocab);
    let peak = -Infinity;
    for (let i = 0; i < this.nVocab; i++) {
      const u = mix32(ctx ^ Math.imul(i + 1, 0x27d4eb2f)) / 4294967296;
      logits[i] = this.base[i] + 2.5 * u;
      if (logits[i] > peak) peak = logits[i];
    }
    let total = 0;
    for (let i = 0; i < this.nVocab; i++) {
      logits[i] = Math.exp(logits[i] - peak);
      total += logits[i];
    }
    for (let i = 0; i < this.nVocab; i++) {
      logits[i] /= total;
    }
    return logits;
  }
}

/** Surprise of a token under the model's conditional, in bits. */
export function surpriseBits(
  model: LanguageModel,
  prefix: readonly number[],
  token: number,
): number {
  const row = model.probs(prefix);
  const p = row[token];
  if (!(p > 0)) {
    throw new Error(`token ${token} has no probability mass`);
  }
  return -Math.log2(p);
}

/** Parse a model spec like "fixture:SEED:NVOCAB". */
export function loadModel(spec: string): LanguageModel {
  const [kind, ...rest] = spec.split(':');
  if (kind === 'fixture') {
    if (rest.length !== 2) {
      throw new Error(`fixture spec must be fixture:SEED:NVOCAB, got ${spec}`);
    }
    return new FixtureLm(Number(rest[0]), Number(rest[1]));
  }
  throw new Error(`unknown model kind ${kind}`);
}
