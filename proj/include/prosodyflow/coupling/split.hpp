#pragma once

#include <vector>

#include "prosodyflow/errors.hpp"

namespace pflow {

// Channel partition of a coupling layer: channels [0, transformed) are
// modified, channels [transformed, total) condition the predictor.
struct CouplingSplit {
    int transformed = 0;
    int total = 0;

    // Contiguous half split; the transformed half takes ceil(C/2) channels.
    static CouplingSplit halves(int channels) {
        if (channels < 2) throw DimensionError("coupling needs at least 2 channels");
        return CouplingSplit{(channels + 1) / 2, channels};
    }

    int conditioning() const { return total - transformed; }

    void validate() const {
        if (transformed <= 0 || transformed >= total) throw DimensionError("coupling split halves must both be non-empty");
    }
};

}  // namespace pflow
