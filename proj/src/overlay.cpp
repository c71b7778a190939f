#include "fine_imitate/overlay.hpp"

#include <algorithm>
#include <cmath>

#include "fine_imitate/image_io.hpp"

namespace fi::mask {

nlohmann::json overlay_to_json(const ImitationMask& mask, std::size_t stride, std::size_t image_w,
                               std::size_t image_h) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& r : mask_to_overlay(mask, stride, image_w, image_h)) cells.push_back({r.x1, r.y1, r.x2, r.y2});
  return {{"stride", stride},
          {"image_w", image_w},
          {"image_h", image_h},
          {"n_positive", mask.n_positive()},
          {"cells", std::move(cells)}};
}

void render_overlay_png(const std::filesystem::path& path, const numerics::Tensor& image, const ImitationMask& mask,
                        std::size_t stride, const std::vector<Box>& gts, double alpha) {
  auto rgb = data::gray_to_rgb(image);
  const std::size_t w = rgb.width, h = rgb.height;
  for (const auto& r : mask_to_overlay(mask, stride, w, h)) {
    for (auto y = static_cast<std::size_t>(r.y1); y < static_cast<std::size_t>(r.y2); ++y) {
      for (auto x = static_cast<std::size_t>(r.x1); x < static_cast<std::size_t>(r.x2); ++x) {
        auto* px = rgb.at(x, y);
        px[0] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * px[0] + alpha * 255.0));
        px[1] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * px[1]));
        px[2] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * px[2]));
      }
    }
  }
  auto plot = [&](long x, long y) {
    if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return;
    auto* px = rgb.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
    px[0] = 0;
    px[1] = 255;
    px[2] = 0;
  };
  for (const auto& b : gts) {
    const long x1 = std::lround(b.x1), y1 = std::lround(b.y1), x2 = std::lround(b.x2) - 1, y2 = std::lround(b.y2) - 1;
    for (long x = x1; x <= x2; ++x) {
      plot(x, y1);
      plot(x, y2);
    }
    for (long y = y1; y <= y2; ++y) {
      plot(x1, y);
      plot(x2, y);
    }
  }
  data::write_png_rgb(path, rgb);
}

}  // namespace fi::mask
