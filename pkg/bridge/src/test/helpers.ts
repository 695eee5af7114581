import { type ChildProcessByStdio, spawn, spawnSync } from 'node:child_process';
import { once } from 'node:events';
import { createInterface, type Interface } from 'node:readline';
import { dirname, join } from 'node:path';
import { fileURLToPath } from 'node:url';
import type { Readable, Writable } from 'node:stream';
import type { Reply, Request } from '../protocol.js';

export const BRIDGE_ROOT = dirname(dirname(dirname(fileURLToPath(import.meta.url))));
export const REPO_ROOT = dirname(BRIDGE_ROOT);
export const BRIDGE_CLI = join(BRIDGE_ROOT, 'dist', 'cli.js');

/** Runs the primary toolkit CLI; the bridge only talks to its external surfaces. */
export function runToolkit(args: string[]): { status: number; stdout: string; stderr: string } {
  const proc = spawnSync('python3', ['-m', 'decoding_toolkit.cli', ...args], {
    env: { ...process.env, PYTHONPATH: join(REPO_ROOT, 'src') },
    encoding: 'utf-8',
  });
  return { status: proc.status ?? -1, stdout: proc.stdout, stderr: proc.stderr };
}

export function parseCsv(text: string): { meta: Map<string, string>; rows: string[][] } {
  const meta = new Map<string, string>();
  const rows: string[][] = [];
  let sawHeader = false;
  for (const line of text.trim().split('\n')) {
    if (line.startsWith('# ')) {
      const eq = line.indexOf('=');
      meta.set(line.slice(2, eq), line.slice(eq + 1));
    } else if (!sawHeader) {
      sawHeader = true;
    } else {
      rows.push(line.split(','));
    }
  }
  return { meta, rows };
}

/** Line-oriented client for a spawned bridge server. */
export class ServerSession {
  private readonly child: ChildProcessByStdio<Writable, Readable, null>;
  private readonly lines: Interface;
  private readonly pending: string[] = [];
  private waiter: ((line: string) => void) | null = null;

  constructor(modelSpec: string, extraArgs: string[] = []) {
    this.child = spawn(
      'node',
      [BRIDGE_CLI, 'serve', '--model', modelSpec, ...extraArgs],
      { stdio: ['pipe', 'pipe', 'inherit'] },
    );
    this.lines = createInterface({ input: this.child.stdout });
    this.lines.on('line', (line) => {
      if (this.waiter) {
        const resolve = this.waiter;
        this.waiter = null;
        resolve(line);
      } else {
        this.pending.push(line);
      }
    });
  }

  async request(message: Request | Record<string, unknown>): Promise<Reply> {
    this.child.stdin.write(JSON.stringify(message) + '\n');
    return JSON.parse(await this.nextLine()) as Reply;
  }

  sendRaw(line: string): void {
    this.child.stdin.write(line + '\n');
  }

  async nextLine(): Promise<string> {
    const queued = this.pending.shift();
    if (queued !== undefined) return queued;
    return new Promise((resolve) => {
      this.waiter = resolve;
    });
  }

  async close(): Promise<number> {
    this.child.stdin.write(JSON.stringify({ type: 'bye' }) + '\n');
    this.child.stdin.end();
    const [code] = (await once(this.child, 'exit')) as [number];
    return code ?? 0;
  }
}
