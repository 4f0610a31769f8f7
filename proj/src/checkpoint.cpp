#include "sfkit/checkpoint.hpp"

#include "sfkit/binio.hpp"

namespace sfk::grad {

namespace {
constexpr char kMagic[4] = {'S', 'F', 'K', 'C'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const ParameterStore& params, const std::string& path) {
  auto os = binio::open_output(path);
  binio::write_magic(os, kMagic);
  binio::write_u32(os, kVersion);
  binio::write_u32(os, uint32_t(params.entries().size()));
  for (const auto& [name, p] : params.entries()) {
    binio::write_string(os, name);
    binio::write_u8(os, p.trainable ? 1 : 0);
    const auto& dims = p.tensor.dims;
    binio::write_u8(os, uint8_t(dims.size()));
    for (const int d : dims) binio::write_u32(os, uint32_t(d));
    for (Eigen::Index r = 0; r < p.tensor.m.rows(); ++r)
      for (Eigen::Index c = 0; c < p.tensor.m.cols(); ++c)
        binio::write_f32(os, float(p.tensor.m(r, c)));
  }
}

ParameterStore load_checkpoint(const std::string& path) {
  auto is = binio::open_input(path);
  binio::expect_magic(is, kMagic, path);
  const uint32_t version = binio::read_u32(is, "version");
  if (version != kVersion)
    throw DataError("'" + path + "': unsupported checkpoint version " +
                    std::to_string(version));
  const uint32_t count = binio::read_u32(is, "tensor count");
  ParameterStore params;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = binio::read_string(is, "tensor name");
    const bool trainable = binio::read_u8(is, "trainable flag") != 0;
    const uint8_t rank = binio::read_u8(is, "rank");
    if (rank < 1 || rank > 2)
      throw DataError("'" + path + "': tensor '" + name +
                      "' has unsupported rank " + std::to_string(rank));
    std::vector<int> dims(rank);
    int64_t total = 1;
    for (auto& d : dims) {
      d = int(binio::read_u32(is, "dim"));
      if (d < 1) throw DataError("'" + path + "': non-positive dimension");
      total *= d;
    }
    Tensor t;
    t.dims = dims;
    const int rows = rank == 2 ? dims[0] : 1;
    const int cols = rank == 2 ? dims[1] : dims[0];
    t.m = Matd(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        float v;
        binio::read_bytes(is, &v, 4, "tensor values");
        t.m(r, c) = double(v);
      }
    (void)total;
    params.add(name, std::move(t), trainable);
  }
  return params;
}

}  // namespace sfk::grad
