#pragma once

namespace rectiscope {

// Lebesgue volume of the unit d-ball. Measures are normalized so that a
// d-plane gives mass r^d to every ball of radius r centered on it; a patch of
// Lebesgue d-area A therefore carries mass A / omega_norm(d).
// Defined in synth.cpp; every weight in the library derives from it.
double omega_norm(int d);

}  // namespace rectiscope
