import { spawn } from "node:child_process";

import { LeodError } from "./errors.js";

export interface CliResult {
  stdout: string;
  stderr: string;
}

/** Command used to reach the core CLI.
 *
 * Override with LEOD_CLI (whitespace-separated, e.g. "python3 -m leodet.cli");
 * defaults to the installed `leod` entry point.
 */
export function cliCommand(): string[] {
  const env = process.env.LEOD_CLI;
  if (env && env.trim()) return env.trim().split(/\s+/);
  return ["leod"];
}

/** Run one core subcommand asynchronously.
 *
 * The child process does the computing; the Node event loop stays free.
 * A nonzero exit with an error JSON on stderr becomes a LeodError carrying
 * the core's error code.
 */
export function runCli(args: string[]): Promise<CliResult> {
  const [cmd, ...prefix] = cliCommand();
  return new Promise((resolve, reject) => {
    const child = spawn(cmd, [...prefix, ...args], { stdio: ["ignore", "pipe", "pipe"] });
    let stdout = "";
    let stderr = "";
    child.stdout.on("data", (chunk) => (stdout += chunk));
    child.stderr.on("data", (chunk) => (stderr += chunk));
    child.on("error", (err) => reject(new LeodError(String(err), "spawn-failed")));
    child.on("close", (exitCode) => {
      if (exitCode === 0) {
        resolve({ stdout, stderr });
        return;
      }
      const lines = stderr.trim().split("\n").filter(Boolean);
      const last = lines[lines.length - 1];
      try {
        const parsed = JSON.parse(last ?? "");
        reject(new LeodError(String(parsed.message ?? last), String(parsed.error ?? "error")));
      } catch {
        reject(new LeodError(`exit ${exitCode}: ${stderr || stdout}`, "error"));
      }
    });
  });
}
