#pragma once

#include <vector>

#include "prosodyflow/dcore/tensor.hpp"

namespace pflow {

// Describes how grouped rows map back to frames: row g holds frames
// g*N .. g*N+N-1, each contributing `frame_channels` consecutive columns.
struct ChannelLayout {
    int group_size = 1;
    int frame_channels = 1;

    int width() const { return group_size * frame_channels; }
};

struct ModelInputTensor {
    Mat values;  // [ceil(T/N) x N*D]
    std::size_t original_length = 0;
    ChannelLayout layout;
};

// Frame indices feeding each grouped row, with the final frame replicated to
// pad a partial last group.
inline std::vector<int> group_frame_index(std::size_t frames, int group_size) {
    const std::size_t groups = (frames + group_size - 1) / group_size;
    std::vector<int> idx(groups * group_size);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(std::min(i, frames - 1));
    return idx;
}

inline ModelInputTensor group(const Mat& frames, int group_size) {
    if (group_size < 1) throw ConfigError("group size must be >= 1");
    if (frames.rows() == 0) throw EmptySequenceError("cannot group an empty sequence");
    const auto idx = group_frame_index(static_cast<std::size_t>(frames.rows()), group_size);
    Mat padded(static_cast<Eigen::Index>(idx.size()), frames.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) padded.row(static_cast<Eigen::Index>(i)) = frames.row(idx[i]);
    ModelInputTensor out;
    out.layout = ChannelLayout{group_size, static_cast<int>(frames.cols())};
    out.original_length = static_cast<std::size_t>(frames.rows());
    const Eigen::Index groups = padded.rows() / group_size;
    out.values = Eigen::Map<const Mat>(padded.data(), groups, group_size * frames.cols());
    return out;
}

inline Mat ungroup(const ModelInputTensor& g) {
    const ChannelLayout& lay = g.layout;
    if (lay.group_size < 1 || lay.frame_channels < 1 || g.values.cols() != lay.width()) {
        throw FormatError("grouped tensor width does not match its layout");
    }
    const Eigen::Index frames = g.values.rows() * lay.group_size;
    if (g.original_length == 0 || static_cast<Eigen::Index>(g.original_length) > frames ||
        static_cast<Eigen::Index>(g.original_length) <= frames - lay.group_size) {
        throw FormatError("original length inconsistent with grouped rows");
    }
    Mat flat = Eigen::Map<const Mat>(g.values.data(), frames, lay.frame_channels);
    return flat.topRows(static_cast<Eigen::Index>(g.original_length));
}

}  // namespace pflow
