// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/core/types.hpp"

#include <algorithm>
#include <cstring>

#include "avs/core/error.hpp"

namespace avs {

VideoLatent::VideoLatent(VideoShape shape, float fill)
    : shape_(shape), data_(static_cast<std::size_t>(shape.numel()), fill) {}

VideoLatent::VideoLatent(VideoShape shape, std::vector<float> data)
    : shape_(shape), data_(std::move(data)) {
  require(static_cast<std::int64_t>(data_.size()) == shape_.numel(), ErrorCode::kShape,
          "video payload size does not match shape");
}

VideoLatent VideoLatent::frames(int first, int count) const {
  require(first >= 0 && count >= 0 && first + count <= shape_.frames, ErrorCode::kBounds,
          "frame range outside latent");
  VideoLatent out({shape_.channels, count, shape_.height, shape_.width});
  const std::size_t plane = static_cast<std::size_t>(shape_.height) * shape_.width;
  for (int c = 0; c < shape_.channels; ++c) {
    const float* src = &data_[index(c, first, 0, 0)];
    std::copy(src, src + plane * count, &out.at(c, 0, 0, 0));
  }
  return out;
}

void VideoLatent::set_frames(int first, const VideoLatent& slice) {
  const VideoShape& s = slice.shape();
  require(s.channels == shape_.channels && s.height == shape_.height && s.width == shape_.width,
          ErrorCode::kShape, "frame slice shape mismatch");
  require(first >= 0 && first + s.frames <= shape_.frames, ErrorCode::kBounds,
          "frame slice outside latent");
  const std::size_t plane = static_cast<std::size_t>(shape_.height) * shape_.width;
  for (int c = 0; c < shape_.channels; ++c) {
    const float* src = slice.data().data() + static_cast<std::size_t>(c) * s.frames * plane;
    std::copy(src, src + plane * s.frames, &data_[index(c, first, 0, 0)]);
  }
}

MelLatent::MelLatent(MelShape shape, float fill)
    : shape_(shape), data_(static_cast<std::size_t>(shape.numel()), fill) {}

MelLatent::MelLatent(MelShape shape, std::vector<float> data)
    : shape_(shape), data_(std::move(data)) {
  require(static_cast<std::int64_t>(data_.size()) == shape_.numel(), ErrorCode::kShape,
          "mel payload size does not match shape");
}

MelLatent MelLatent::steps(int first, int count) const {
  require(first >= 0 && count >= 0 && first + count <= shape_.time, ErrorCode::kBounds,
          "time range outside latent");
  MelLatent out({shape_.channels, count, shape_.freq});
  for (int c = 0; c < shape_.channels; ++c) {
    const float* src = &data_[index(c, first, 0)];
    std::copy(src, src + static_cast<std::size_t>(count) * shape_.freq, &out.at(c, 0, 0));
  }
  return out;
}

bool satisfies_invariants(const SampleTuple& sample) {
  if (sample.video_caption.empty() || sample.audio_caption.empty() || sample.speech.empty()) {
    return false;
  }
  if (sample.video.shape().frames < 1) return false;
  return sample.reference == sample.video.frames(0, 1);
}

namespace {

template <typename T>
bool same_bytes(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size_bytes()) == 0);
}

}  // namespace

bool bitwise_equal(const SampleTuple& a, const SampleTuple& b) {
  return a.clip_id == b.clip_id && a.subset == b.subset &&
         a.video.shape() == b.video.shape() && a.audio.shape() == b.audio.shape() &&
         a.reference.shape() == b.reference.shape() &&
         same_bytes(a.video.data(), b.video.data()) && same_bytes(a.audio.data(), b.audio.data()) &&
         same_bytes(a.reference.data(), b.reference.data()) &&
         a.video_caption == b.video_caption && a.audio_caption == b.audio_caption &&
         a.speech == b.speech;
}

}  // namespace avs
