#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pedcross/model.hpp"

namespace pedcross {

struct GradCheckGroup {
    std::string name;  // embed, enc.0, ..., dec.out, head
    double max_rel_err = 0.0;
    int coords_checked = 0;
};

struct GradCheckReport {
    Arch arch = Arch::kTeo;
    double max_rel_err = 0.0;
    std::vector<GradCheckGroup> groups;
};

// Reduced-width config per architecture used by the gradient gate; the
// layer/head structure matches the full models (TEO 4x8, TEP with
// window/stride 2, TED 2 encoder + 2 decoder layers).
ModelConfig gradcheck_config(Arch arch);

// Central-difference check of a full forward + loss against the tape
// gradients, probing coords_per_tensor coordinates of every parameter
// (0 = all). Deterministic under seed.
GradCheckReport run_gradcheck_gate(Arch arch, std::uint64_t seed, double eps = 1e-5,
                                   int coords_per_tensor = 3);

std::string gradcheck_report_text(const GradCheckReport& report);

}  // namespace pedcross
