#include "mfsc/envs/export.hpp"

#include <zlib.h>

#include <array>
#include <fstream>
#include <json.hpp>

namespace mfsc::envs {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(std::uint8_t(v >> shift));
}

void write_chunk(std::ofstream& os, const char* type, const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> head;
  put_u32(head, std::uint32_t(data.size()));
  os.write(reinterpret_cast<const char*>(head.data()), 4);
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  os.write(reinterpret_cast<const char*>(body.data()), std::streamsize(body.size()));
  std::vector<std::uint8_t> crc;
  put_u32(crc, std::uint32_t(crc32(0, body.data(), uInt(body.size()))));
  os.write(reinterpret_cast<const char*>(crc.data()), 4);
}

// View colors: walls grey, agent red, goal green.
std::array<std::uint8_t, 3> pixel_color(const float* px) {
  std::array<float, 3> rgb{0.1f, 0.1f, 0.1f};
  rgb[0] += 0.5f * px[0];
  rgb[1] += 0.5f * px[0];
  rgb[2] += 0.5f * px[0];
  rgb[0] += 0.9f * px[1];
  rgb[1] += 0.9f * px[2];
  std::array<std::uint8_t, 3> out{};
  for (int k = 0; k < 3; ++k) out[std::size_t(k)] = std::uint8_t(std::min(1.0f, rgb[std::size_t(k)]) * 255.0f);
  return out;
}

}  // namespace

void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != width * height * 3) throw EnvError("write_png: pixel buffer has the wrong size");
  std::vector<std::uint8_t> raw;
  raw.reserve(height * (width * 3 + 1));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), rgb.begin() + long(y * width * 3), rgb.begin() + long((y + 1) * width * 3));
  }
  uLongf packed_size = compressBound(uLong(raw.size()));
  std::vector<std::uint8_t> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), uLong(raw.size()), 9) != Z_OK) {
    throw EnvError("write_png: compression failed");
  }
  packed.resize(packed_size);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw EnvError("write_png: cannot open " + path.string());
  const std::uint8_t signature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(signature), 8);
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, std::uint32_t(width));
  put_u32(ihdr, std::uint32_t(height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit truecolor
  write_chunk(os, "IHDR", ihdr);
  write_chunk(os, "IDAT", packed);
  write_chunk(os, "IEND", {});
  if (!os) throw EnvError("write_png: write failed for " + path.string());
}

void export_render_table(const GridWorld& env, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& cfg = env.config();
  const std::size_t N = cfg.grid_size, cell = 16;

  std::vector<std::uint8_t> layout(N * cell * N * cell * 3);
  const auto goal = env.cell(env.goal_state());
  for (std::size_t y = 0; y < N * cell; ++y) {
    for (std::size_t x = 0; x < N * cell; ++x) {
      const float px[3] = {env.is_wall(y / cell, x / cell) ? 1.0f : 0.0f, 0.0f,
                           (y / cell == goal.first && x / cell == goal.second) ? 1.0f : 0.0f};
      const auto c = pixel_color(px);
      std::copy(c.begin(), c.end(), layout.begin() + long((y * N * cell + x) * 3));
    }
  }
  write_png(dir / "layout.png", N * cell, N * cell, layout);

  const auto H = cfg.view_height, W = cfg.view_width, K = cfg.num_views(), S = env.num_states();
  const std::size_t gap = 2;
  const auto table_w = K * W + (K - 1) * gap, table_h = S * H + (S - 1) * gap;
  std::vector<std::uint8_t> table(table_w * table_h * 3, 255);
  for (std::size_t s = 0; s < S; ++s) {
    const auto obs = env.render_state(s);
    for (std::size_t v = 0; v < K; ++v) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const auto c = pixel_color(obs.views[v].data() + (y * W + x) * obs.channels);
          const auto ty = s * (H + gap) + y, tx = v * (W + gap) + x;
          std::copy(c.begin(), c.end(), table.begin() + long((ty * table_w + tx) * 3));
        }
      }
    }
  }
  write_png(dir / "render_table.png", table_w, table_h, table);

  nlohmann::json manifest;
  manifest["grid_size"] = N;
  manifest["layout_seed"] = env.layout_seed();
  manifest["regenerations"] = env.regenerations();
  manifest["goal_state"] = env.goal_state();
  manifest["num_states"] = S;
  manifest["discount"] = cfg.discount;
  nlohmann::json views = nlohmann::json::array();
  for (std::size_t v = 0; v < K; ++v) views.push_back(v < cfg.views.size() ? to_string(cfg.views[v]) : "noise");
  manifest["views"] = views;
  manifest["view_shape"] = {H, W, 3 * cfg.frame_stack};
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t s = 0; s < S; ++s) cells.push_back({env.cell(s).first, env.cell(s).second});
  manifest["state_cells"] = cells;
  nlohmann::json walls = nlohmann::json::array();
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < N; ++c)
      if (env.is_wall(r, c)) walls.push_back({r, c});
  manifest["walls"] = walls;
  manifest["joint_views_injective"] = joint_views_injective(env);
  manifest["render_table_rows"] = "state id, top to bottom; columns are views in order";
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << "\n";
  if (!os) throw EnvError("export: cannot write manifest in " + dir.string());
}

}  // namespace mfsc::envs
