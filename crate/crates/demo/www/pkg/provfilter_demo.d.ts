/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Copies a `size`-square patch from the donor's center onto the host
     * centered at (x, y), then re-encodes as JPEG. Returns the query RGBA.
     */
    compose(host: number, donor: number, x: number, y: number, size: number): Uint8Array;
    height(): number;
    image_id(i: number): string;
    image_rgba(i: number): Uint8Array;
    is_empty(): boolean;
    len(): number;
    /**
     * Mask of the last query as RGBA, red over transparent; empty when
     * no mask was computed.
     */
    mask_rgba(): Uint8Array;
    /**
     * Renders `count` gallery images and indexes them with `backend`.
     */
    constructor(count: number, seed: number, backend: string);
    /**
     * Runs both tiers on the current query; returns the result JSON.
     */
    run(): string;
    /**
     * Uses an unmodified gallery image as the query.
     */
    select(i: number): Uint8Array;
    /**
     * Index summary as JSON.
     */
    stats(): string;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_compose: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly demo_height: (a: number) => number;
    readonly demo_image_id: (a: number, b: number) => [number, number];
    readonly demo_image_rgba: (a: number, b: number) => [number, number];
    readonly demo_is_empty: (a: number) => number;
    readonly demo_len: (a: number) => number;
    readonly demo_mask_rgba: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demo_run: (a: number) => [number, number, number, number];
    readonly demo_select: (a: number, b: number) => [number, number];
    readonly demo_stats: (a: number) => [number, number];
    readonly demo_width: (a: number) => number;
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
