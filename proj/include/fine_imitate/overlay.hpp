#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "fine_imitate/mask.hpp"
#include "fine_imitate/tensor.hpp"

namespace fi::mask {

/// {"stride", "image_w", "image_h", "n_positive", "cells": [[x1, y1, x2, y2], ...]}
nlohmann::json overlay_to_json(const ImitationMask& mask, std::size_t stride, std::size_t image_w,
                               std::size_t image_h);

/// Draws the image with every mask cell alpha-blended in red and the gt boxes
/// outlined in green, then writes it as an RGB PNG.
void render_overlay_png(const std::filesystem::path& path, const numerics::Tensor& image, const ImitationMask& mask,
                        std::size_t stride, const std::vector<Box>& gts, double alpha = 0.45);

}  // namespace fi::mask
