/**
 * Process bridge to the core CLI. Every call spawns one `tfm` invocation in
 * its own scratch directory, so concurrent calls from multiple callers are
 * safe and nothing blocks the event loop while the core computes.
 *
 * Structured CLI failures ({"error": {...}} on stderr, nonzero exit) become
 * CoreError with the core's own message.
 */

import { execFile } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

/** Override the core executable with TFM_BIN (e.g. "python3 -m tfm.cli"). */
export function coreCommand(): string[] {
  const bin = process.env.TFM_BIN;
  if (bin && bin.trim().length) {
    return bin.trim().split(/\s+/);
  }
  return ["tfm"];
}

export class CoreError extends Error {
  readonly coreType: string;

  constructor(coreType: string, message: string) {
    super(message);
    this.name = "CoreError";
    this.coreType = coreType;
  }
}

export function runCore(args: string[]): Promise<string> {
  const [cmd, ...prefix] = coreCommand();
  return new Promise((resolve, reject) => {
    execFile(cmd, [...prefix, ...args], { maxBuffer: 1 << 26 },
      (error, stdout, stderr) => {
        if (!error) {
          resolve(stdout);
          return;
        }
        try {
          const parsed = JSON.parse(stderr.trim().split("\n").pop() ?? "");
          reject(new CoreError(parsed.error.type, parsed.error.message));
        } catch {
          reject(new Error(`core invocation failed: ${stderr || error.message}`));
        }
      });
  });
}

export async function coreVersion(): Promise<string> {
  return (await runCore(["--version"])).trim();
}

/** Run `body` with a scratch directory that is always cleaned up. */
export async function withScratchDir<T>(body: (dir: string) => Promise<T>): Promise<T> {
  const dir = mkdtempSync(join(tmpdir(), "tfm-client-"));
  try {
    return await body(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}
