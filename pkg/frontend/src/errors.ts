/** The control endpoint could not be reached or the stream dropped. */
export class ConnectionFailed extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ConnectionFailed";
  }
}

/** The question was already answered or timed out on the engine side. */
export class StaleQuestion extends Error {
  constructor(message: string) {
    super(message);
    this.name = "StaleQuestion";
  }
}

/** Client-side input rejection; nothing was sent to the endpoint. */
export class ValidationError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ValidationError";
  }
}

/** Any other non-2xx response. */
export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}
