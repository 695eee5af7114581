/**
 * Stdio model server: answers protocol requests until "bye" or EOF.
 *
 * Malformed requests get an error reply and the loop continues; a model
 * failure gets an error reply and a nonzero exit.  The server never samples;
 * truncation and token choice belong to the client.
 */

import { createInterface } from 'node:readline';
import type { LanguageModel } from './model.js';
import { PROTOCOL_VERSION, sparsify, type Reply } from './protocol.js';

export interface ServeOptions {
  topM: number;
}

function send(reply: Reply): void {
  process.stdout.write(JSON.stringify(reply) + '\n');
}

export async function serveStdio(
  model: LanguageModel,
  options: ServeOptions,
): Promise<number> {
  const lines = createInterface({ input: process.stdin });
  for await (const line of lines) {
    if (!line.trim()) continue;
    let request: unknown;
    try {
      request = JSON.parse(line);
    } catch {
      send({ type: 'error', message: 'request is not valid JSON' });
      continue;
    }
    const kind = (request as { type?: string }).type;
    if (kind === 'hello') {
      const version = (request as { version?: number }).version;
      if (version !== PROTOCOL_VERSION) {
        send({ type: 'error', message: `unsupported protocol version ${version}` });
        continue;
      }
      send({ type: 'model', n_vocab: model.nVocab, name: model.name });
    } else if (kind === 'next') {
      const prefix = (request as { prefix?: unknown }).prefix;
      if (
        !Array.isArray(prefix) ||
        prefix.some((t) => !Number.isInteger(t) || t < 0 || t >= model.nVocab)
      ) {
        send({ type: 'error', message: 'prefix must be an array of in-vocabulary ids' });
        continue;
      }
      try {
        send(sparsify(model.probs(prefix as number[]), options.topM));
      } catch (err) {
        send({ type: 'error', message: `model failure: ${(err as Error).message}` });
        return 1;
      }
    } else if (kind === 'bye') {
      return 0;
    } else {
      send({ type: 'error', message: `unknown request type ${JSON.stringify(kind)}` });
    }
  }
  return 0;
}
