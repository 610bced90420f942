/** Error raised when the core pipeline rejects an input.
 *
 * `code` carries the core's machine-readable error code (for example
 * "invalid-thresholds" or "invalid-input") exactly as emitted on stderr.
 */
export class LeodError extends Error {
  constructor(message: string, readonly code: string) {
    super(message);
    this.name = "LeodError";
  }
}
