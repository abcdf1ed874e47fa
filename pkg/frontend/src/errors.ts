/**
 * Host-side error type.
 *
 * Every failure carries a stable ``code`` string that goes into protocol
 * error replies, mirroring the codes the Python client maps to exceptions.
 */

export class HostError extends Error {
  constructor(
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "HostError";
  }
}

export function errorCode(err: unknown): string {
  return err instanceof HostError ? err.code : "PROTOCOL";
}

export function errorMessage(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
