/* tslint:disable */
/* eslint-disable */

/**
 * Gamma constrained value at time 0 for controls spread over `[0.25, 4] sigma^2`.
 */
export function gamma_band_profile(sigma: number, gamma_lo: number, gamma_hi: number, payoff: string, strike: number): Float64Array;

/**
 * One Euler path with constant diffusion `a`; returns `[t, x, qv, a_hat]`
 * rows thinned to at most 2000.
 */
export function qv_demo(a: number, n_steps: number, window: number, seed: bigint): Float64Array;

/**
 * Uncertain volatility value at time 0 with controls `{sig_lo^2, sig_hi^2}`.
 */
export function uvm_profile(sig_lo: number, sig_hi: number, payoff: string, strike: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly gamma_band_profile: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly qv_demo: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly uvm_profile: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
