/**
 * Replay exporter: teacher-forced full-vocabulary conditionals for a given
 * token sequence, optionally conditioned on a prompt prefix that is not
 * itself recorded.
 */

import type { LanguageModel } from './model.js';
import { writeReplay } from './replay.js';

export function exportReplay(
  model: LanguageModel,
  prompt: readonly number[],
  tokens: readonly number[],
  outPath: string,
): void {
  const rows: Float64Array[] = [];
  const prefix = [...prompt];
  for (const token of tokens) {
    rows.push(model.probs(prefix));
    prefix.push(token);
  }
  writeReplay(outPath, model.nVocab, tokens, rows);
}
