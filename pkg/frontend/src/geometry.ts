/**
 * Coordinate mapping between display space and source-image pixel space.
 *
 * Boxes are half-open in image pixels: (x0, y0, x1, y1) covers x0 <= x < x1,
 * y0 <= y < y1, with 0 <= x0 < x1 <= W. Display coordinates convert to image
 * coordinates by dividing by the scale factor and rounding to the nearest
 * integer (ties round up, Math.round), then clamping to the image bounds.
 * With an integer scale factor the round trip image -> display -> image is
 * exact; with a fractional factor it is within one pixel.
 */

export interface Box {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface Size {
  width: number;
  height: number;
}

export function clamp(value: number, lo: number, hi: number): number {
  return Math.min(Math.max(value, lo), hi);
}

/** Display px -> image px corner coordinate in [0, limit]. */
export function toImageCoord(display: number, scale: number, limit: number): number {
  return clamp(Math.round(display / scale), 0, limit);
}

/** Image px corner coordinate -> display px. */
export function toDisplayCoord(image: number, scale: number): number {
  return image * scale;
}

/**
 * Scale factor for showing an image inside maxWidth display pixels:
 * an integer upscale for small images (keeps the coordinate round trip
 * exact), a fractional downscale only when the image is too wide to fit.
 */
export function displayScale(imageWidth: number, maxWidth: number): number {
  if (imageWidth >= maxWidth) {
    return maxWidth / imageWidth;
  }
  return Math.max(1, Math.floor(maxWidth / imageWidth));
}

/**
 * Turn a drag between two display points into a normalized image-space box:
 * corners are ordered regardless of drag direction and clamped to the image.
 * Returns null for a zero-area result (e.g. a click without a drag).
 */
export function dragToBox(
  start: { x: number; y: number },
  end: { x: number; y: number },
  scale: number,
  size: Size,
): Box | null {
  const x0 = toImageCoord(Math.min(start.x, end.x), scale, size.width);
  const x1 = toImageCoord(Math.max(start.x, end.x), scale, size.width);
  const y0 = toImageCoord(Math.min(start.y, end.y), scale, size.height);
  const y1 = toImageCoord(Math.max(start.y, end.y), scale, size.height);
  if (x1 <= x0 || y1 <= y0) {
    return null;
  }
  return { x0, y0, x1, y1 };
}

export function boxToArray(box: Box): [number, number, number, number] {
  return [box.x0, box.y0, box.x1, box.y1];
}
