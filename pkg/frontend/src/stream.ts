// Full-duplex stream to the center: inbound lines are either wire messages
// or plain error objects; outbound bodies ride the same envelope framing the
// vehicles use.

import { Body, Envelope, MessageFactory, WireError, decodeMessage, encodeMessage } from "./wire.js";

export interface StreamError {
  error: string;
  detail: string;
}

// minimal slice of the browser WebSocket so tests can inject a fake
export interface StreamSocket {
  send(data: string): void;
  close(): void;
  onopen: ((ev: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
}

export type SocketFactory = (url: string) => StreamSocket;

// console envelopes use a high id prefix so their msg_ids never collide
// with center- or vehicle-stamped ones
export const CONSOLE_ID_PREFIX = 900;

export class StreamClient {
  private socket: StreamSocket | null = null;
  private factory = new MessageFactory(CONSOLE_ID_PREFIX);
  private messageHandlers: Array<(msg: Envelope) => void> = [];
  private errorHandlers: Array<(err: StreamError) => void> = [];
  private closeHandlers: Array<() => void> = [];

  constructor(
    private url: string,
    private makeSocket: SocketFactory = (u) => new WebSocket(u) as unknown as StreamSocket,
  ) {}

  get connected(): boolean {
    return this.socket !== null;
  }

  connect(): Promise<void> {
    return new Promise((resolve, reject) => {
      const socket = this.makeSocket(this.url);
      socket.onopen = () => {
        this.socket = socket;
        resolve();
      };
      socket.onerror = (ev) => {
        if (this.socket === null) {
          reject(new Error(`stream connect failed: ${String(ev)}`));
        }
      };
      socket.onclose = () => {
        this.socket = null;
        for (const handler of this.closeHandlers) {
          handler();
        }
      };
      socket.onmessage = (ev) => this.dispatch(String(ev.data));
    });
  }

  private dispatch(line: string): void {
    let message: Envelope;
    try {
      message = decodeMessage(line);
    } catch (err) {
      if (err instanceof WireError) {
        // not an envelope: the server replies to bad input with {error, detail}
        try {
          const raw = JSON.parse(line) as StreamError;
          if (typeof raw.error === "string") {
            for (const handler of this.errorHandlers) {
              handler(raw);
            }
            return;
          }
        } catch {
          // fall through
        }
      }
      throw err;
    }
    for (const handler of this.messageHandlers) {
      handler(message);
    }
  }

  onMessage(handler: (msg: Envelope) => void): void {
    this.messageHandlers.push(handler);
  }

  onError(handler: (err: StreamError) => void): void {
    this.errorHandlers.push(handler);
  }

  onClose(handler: () => void): void {
    this.closeHandlers.push(handler);
  }

  sendBody(vehicleId: string, body: Body): void {
    if (this.socket === null) {
      throw new Error("stream is not connected");
    }
    this.socket.send(encodeMessage(this.factory.build(vehicleId, body)));
  }

  close(): void {
    this.socket?.close();
    this.socket = null;
  }
}
