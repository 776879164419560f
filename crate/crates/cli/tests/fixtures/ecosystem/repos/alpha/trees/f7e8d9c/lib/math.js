function clamp(x, lo, hi) {
  if (x < lo) return lo;
  if (x > hi) return hi;
  return x; // TODO
}
function sign(x) {
  return x < 0 ? -1 : 1;
}
module.exports = { clamp, sign };
