/**
 * Bridge command line.
 *
 *   serve  --model SPEC [--top-m M]
 *   export --model SPEC --tokens-file FILE [--prompt-file FILE] --export OUT
 *
 * Token files are whitespace-separated integer ids.
 */

import { readFileSync } from 'node:fs';
import { exportReplay } from './export.js';
import { loadModel } from './model.js';
import { serveStdio } from './server.js';

const DEFAULT_TOP_M = 5000;

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got ${argv.slice(i).join(' ')}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return flags;
}

function readTokens(path: string): number[] {
  return readFileSync(path, 'utf-8')
    .split(/\s+/)
    .filter((t) => t.length > 0)
    .map((t) => {
      const value = Number(t);
      if (!Number.isInteger(value) || value < 0) {
        throw new Error(`bad token id ${t}`);
      }
      return value;
    });
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  try {
    const flags = parseFlags(rest);
    const spec = flags.get('model');
    if (!spec) throw new Error('--model is required');
    const model = loadModel(spec);
    if (command === 'serve') {
      const topM = flags.has('top-m') ? Number(flags.get('top-m')) : DEFAULT_TOP_M;
      if (!Number.isInteger(topM) || topM < 1) {
        throw new Error(`--top-m must be a positive integer, got ${flags.get('top-m')}`);
      }
      return await serveStdio(model, { topM });
    }
    if (command === 'export') {
      const tokensFile = flags.get('tokens-file');
      const outPath = flags.get('export');
      if (!tokensFile || !outPath) {
        throw new Error('export needs --tokens-file and --export');
      }
      const prompt = flags.has('prompt-file')
        ? readTokens(flags.get('prompt-file')!)
        : [];
      exportReplay(model, prompt, readTokens(tokensFile), outPath);
      return 0;
    }
    throw new Error(`unknown command ${JSON.stringify(command)}; use serve or export`);
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 2;
  }
}

main().then((code) => {
  process.exitCode = code;
});
