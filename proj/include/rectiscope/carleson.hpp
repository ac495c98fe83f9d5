#pragma once

#include <string>
#include <vector>

#include "rectiscope/cloud.hpp"
#include "rectiscope/coefficients.hpp"
#include "rectiscope/lattice.hpp"

namespace rectiscope {

enum class CoefficientKind { Alpha, Bbeta1, Bbetainf, Osc, Gamma };
CoefficientKind parse_coefficient_kind(const std::string& s);
std::string to_string(CoefficientKind k);
double coefficient_value(const CubeCoefficients& row, CoefficientKind k);

struct CarlesonRow {
  int root = 0;
  int j = 0;
  double sum = 0;         // sum over counted Q inside the root of coeff(Q)^2 mass(Q)
  double mass = 0;        // mass of the root
  double normalized = 0;  // sum / mass
  int counted = 0;        // cubes with a value
  int excluded = 0;       // cubes without one (unreliable or untrusted)
};

struct CarlesonReport {
  CoefficientKind kind = CoefficientKind::Alpha;
  std::vector<CarlesonRow> rows;   // interior roots only
  double sup = 0;
  int argmax = -1;                 // root id attaining sup
  int j_lo = 0, j_hi = 0;          // generations of the cubes summed
  int min_generation = 0;
  double interior_factor = 4;
};

// Normalized sum for one root. Cubes without a value (NaN) are skipped and
// reported through excluded. Throws when nothing under the root has a value.
double carleson_sum(const Lattice& lat, const std::vector<CubeCoefficients>& coeffs, int root, CoefficientKind kind,
                    int* excluded = nullptr);

// Supremum over roots R with j >= min_generation and
// |c_R - window center| + interior_factor diam R <= window radius.
CarlesonReport carleson_sup(const Lattice& lat, const std::vector<CubeCoefficients>& coeffs,
                            const WeightedPointCloud& cloud, CoefficientKind kind, int min_generation,
                            double interior_factor = 4);

std::string carleson_to_csv(const CarlesonReport& r);
std::string carleson_to_json(const CarlesonReport& r);

}  // namespace rectiscope
