#include "cmr/layers.hpp"

#include <string>

namespace cmr {

ChannelGroups phase_groups() { return {{0, 1, 2, 3}, {4, 5, 6, 7}}; }

void validate_groups(const ChannelGroups& groups, std::size_t channels) {
  std::vector<bool> seen(channels, false);
  for (const auto& group : groups) {
    if (group.empty()) throw InputError("grouped softmax: empty channel group");
    for (std::size_t c : group) {
      if (c >= channels)
        throw InputError("grouped softmax: channel " + std::to_string(c) + " out of range for " +
                         std::to_string(channels) + " channels");
      if (seen[c]) throw InputError("grouped softmax: channel " + std::to_string(c) + " appears in two groups");
      seen[c] = true;
    }
  }
}

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t dilation) {
  if (kernel == 0 || dilation == 0) throw InputError("conv2d: kernel and dilation must be positive");
  const std::size_t footprint = dilation * (kernel - 1) + 1;
  if (input < footprint)
    throw InputError("conv2d: input extent " + std::to_string(input) + " smaller than kernel footprint " +
                     std::to_string(footprint));
  return input - footprint + 1;
}

}  // namespace cmr
