#include "storage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace derain {

namespace fs = std::filesystem;

// ------------------------------------------------------------ tensor file --

static void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

static void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

static std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return std::uint16_t(b[0] | (b[1] << 8));
}

static std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

// floats are serialized little-endian; this code targets little-endian hosts
static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

void write_tensor_stream(std::ostream& os, const Tensor& t) {
  os.write("DRTN", 4);
  put_u16(os, 1);
  os.put(char(0));  // dtype float32
  DERAIN_CHECK(t.rank() <= 255, ErrorCode::InvalidArgument, "tensor rank ", t.rank(), " > 255");
  os.put(char(t.rank()));
  for (int d : t.shape()) put_u32(os, std::uint32_t(d));
  os.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * 4));
  DERAIN_CHECK(os.good(), ErrorCode::Io, "tensor write failed");
}

Tensor read_tensor_stream(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  DERAIN_CHECK(is.good() && std::memcmp(magic, "DRTN", 4) == 0, ErrorCode::Parse,
               "bad tensor magic, expected \"DRTN\"");
  std::uint16_t version = get_u16(is);
  DERAIN_CHECK(version == 1, ErrorCode::Parse, "unsupported tensor version ", version);
  int dtype = is.get();
  DERAIN_CHECK(dtype == 0, ErrorCode::Parse, "unsupported tensor dtype ", dtype);
  int ndim = is.get();
  DERAIN_CHECK(ndim >= 0 && is.good(), ErrorCode::Parse, "truncated tensor header");
  Shape shape(std::size_t(ndim));
  std::int64_t numel = 1;
  for (int i = 0; i < ndim; ++i) {
    std::uint32_t d = get_u32(is);
    DERAIN_CHECK(d <= 0x7fffffffu, ErrorCode::Parse, "tensor dimension ", d, " overflows");
    shape[std::size_t(i)] = int(d);
    numel *= d;
    DERAIN_CHECK(numel <= (std::int64_t(1) << 34), ErrorCode::Parse,
                 "tensor payload too large: ", numel, " elements");
  }
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * 4));
  DERAIN_CHECK(is.gcount() == std::streamsize(t.numel() * 4), ErrorCode::Parse,
               "truncated tensor payload: expected ", t.numel() * 4, " bytes");
  return t;
}

void write_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  DERAIN_CHECK(os.is_open(), ErrorCode::Io, "cannot open ", path, " for writing");
  write_tensor_stream(os, t);
  DERAIN_CHECK(os.good(), ErrorCode::Io, "write failed: ", path);
}

Tensor read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  DERAIN_CHECK(is.is_open(), ErrorCode::Io, "cannot open ", path);
  try {
    return read_tensor_stream(is);
  } catch (const Error& e) {
    throw_error(e.code(), path, ": ", e.what());
  }
}

// ----------------------------------------------------------------- frames --

int quantize_sample(float v) {
  long q = std::lround(double(v) * 255.0);  // round half away from zero == half up here
  return q < 0 ? 0 : (q > 255 ? 255 : int(q));
}

float decode_byte(int byte) {
  long q = std::lround(double(byte) / 255.0 * 65536.0);
  return float(q) / 65536.0f;
}

void write_frame(const std::string& path, const Tensor& frame) {
  DERAIN_CHECK(frame.rank() == 3 && (frame.dim(0) == 1 || frame.dim(0) == 3),
               ErrorCode::InvalidArgument, "write_frame expects (1,H,W) or (3,H,W), got ",
               shape_str(frame.shape()));
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  DERAIN_CHECK(frame.min() >= -1e-6f && frame.max() <= 1.0f + 1e-6f, ErrorCode::InvalidArgument,
               "write_frame: values outside [0,1]: min=", frame.min(), " max=", frame.max());
  std::ofstream os(path, std::ios::binary);
  DERAIN_CHECK(os.is_open(), ErrorCode::Io, "cannot open ", path, " for writing");
  os << (c == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(std::size_t(w) * std::size_t(c));
  const std::int64_t hw = std::int64_t(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        row[std::size_t(x * c + ch)] =
            (unsigned char)quantize_sample(frame[std::int64_t(ch) * hw + std::int64_t(y) * w + x]);
    os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  DERAIN_CHECK(os.good(), ErrorCode::Io, "frame write failed: ", path);
}

static int read_pnm_token(std::istream& is, const std::string& path) {
  // skips whitespace and '#' comments
  int ch = is.get();
  while (is.good()) {
    if (ch == '#') {
      while (is.good() && ch != '\n') ch = is.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = is.get();
  }
  DERAIN_CHECK(is.good() && std::isdigit(ch), ErrorCode::Parse, path, ": malformed PNM header");
  int value = 0;
  while (is.good() && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    DERAIN_CHECK(value <= 1 << 24, ErrorCode::Parse, path, ": header value overflow");
    ch = is.get();
  }
  return value;
}

Tensor read_frame(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  DERAIN_CHECK(is.is_open(), ErrorCode::Io, "cannot open ", path);
  char m0 = char(is.get()), m1 = char(is.get());
  DERAIN_CHECK(is.good() && m0 == 'P' && (m1 == '5' || m1 == '6'), ErrorCode::Parse, path,
               ": malformed header, expected P5 or P6");
  const int c = m1 == '6' ? 3 : 1;
  const int w = read_pnm_token(is, path);
  const int h = read_pnm_token(is, path);
  const int maxval = read_pnm_token(is, path);
  DERAIN_CHECK(maxval == 255, ErrorCode::Parse, path, ": unsupported maxval ", maxval);
  // exactly one whitespace byte separates header and raster
  std::vector<unsigned char> raster(std::size_t(w) * h * std::size_t(c));
  is.read(reinterpret_cast<char*>(raster.data()), std::streamsize(raster.size()));
  DERAIN_CHECK(is.gcount() == std::streamsize(raster.size()), ErrorCode::Parse, path,
               ": truncated raster");
  Tensor frame(Shape{c, h, w});
  const std::int64_t hw = std::int64_t(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        frame[std::int64_t(ch) * hw + std::int64_t(y) * w + x] =
            decode_byte(raster[std::size_t((y * w + x) * c + ch)]);
  return frame;
}

// ------------------------------------------------------------- checkpoint --

static std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", double(v));
  return buf;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ostringstream blobs(std::ios::binary);
  std::ostringstream manifest;
  std::int64_t offset = 0;
  for (const auto& [name, tensor] : ck.tensors) {
    manifest << name << " " << offset;
    manifest << " " << tensor.rank();
    for (int d : tensor.shape()) manifest << " " << d;
    manifest << "\n";
    std::ostringstream one(std::ios::binary);
    write_tensor_stream(one, tensor);
    std::string bytes = one.str();
    blobs.write(bytes.data(), std::streamsize(bytes.size()));
    offset += std::int64_t(bytes.size());
  }
  std::ofstream os(path, std::ios::binary);
  DERAIN_CHECK(os.is_open(), ErrorCode::Io, "cannot open ", path, " for writing");
  os << "DRCKPT 1\n";
  os << "step = " << ck.meta.step << "\n";
  os << "phase = " << ck.meta.phase << "\n";
  os << "seed = " << ck.meta.seed << "\n";
  os << "theta = " << fmt_float(ck.meta.theta) << "\n";
  os << "alpha = " << fmt_float(ck.meta.alpha) << "\n";
  os << "beta = " << fmt_float(ck.meta.beta) << "\n";
  os << "channels = " << ck.meta.channels << "\n";
  os << "segment_length = " << ck.meta.segment_length << "\n";
  os << "variant = " << ck.meta.variant << "\n";
  os << "tensors = " << ck.tensors.size() << "\n";
  os << manifest.str();
  os << "\n";
  std::string bytes = blobs.str();
  os.write(bytes.data(), std::streamsize(bytes.size()));
  DERAIN_CHECK(os.good(), ErrorCode::Io, "checkpoint write failed: ", path);
}

static std::string expect_line(std::istream& is, const std::string& path) {
  std::string line;
  DERAIN_CHECK(bool(std::getline(is, line)), ErrorCode::Parse, path, ": truncated checkpoint header");
  return line;
}

static std::string header_value(const std::string& line, const char* key, const std::string& path) {
  std::string prefix = std::string(key) + " = ";
  DERAIN_CHECK(line.rfind(prefix, 0) == 0, ErrorCode::Parse, path, ": expected '", key,
               " = ...', got '", line, "'");
  return line.substr(prefix.size());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  DERAIN_CHECK(is.is_open(), ErrorCode::Io, "cannot open ", path);
  Checkpoint ck;
  DERAIN_CHECK(expect_line(is, path) == "DRCKPT 1", ErrorCode::Parse, path,
               ": bad checkpoint magic, expected \"DRCKPT 1\"");
  ck.meta.step = std::stoll(header_value(expect_line(is, path), "step", path));
  ck.meta.phase = std::stoi(header_value(expect_line(is, path), "phase", path));
  ck.meta.seed = std::stoull(header_value(expect_line(is, path), "seed", path));
  ck.meta.theta = std::stof(header_value(expect_line(is, path), "theta", path));
  ck.meta.alpha = std::stof(header_value(expect_line(is, path), "alpha", path));
  ck.meta.beta = std::stof(header_value(expect_line(is, path), "beta", path));
  ck.meta.channels = std::stoi(header_value(expect_line(is, path), "channels", path));
  ck.meta.segment_length = std::stoi(header_value(expect_line(is, path), "segment_length", path));
  ck.meta.variant = header_value(expect_line(is, path), "variant", path);
  std::size_t count = std::stoul(header_value(expect_line(is, path), "tensors", path));
  std::vector<std::string> names;
  names.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream line(expect_line(is, path));
    std::string name;
    std::int64_t offset = 0;
    int ndim = 0;
    line >> name >> offset >> ndim;
    DERAIN_CHECK(bool(line), ErrorCode::Parse, path, ": malformed manifest line ", i);
    names.push_back(name);
  }
  DERAIN_CHECK(expect_line(is, path).empty(), ErrorCode::Parse, path,
               ": expected blank line after manifest");
  for (auto& name : names) ck.tensors.emplace_back(std::move(name), read_tensor_stream(is));
  return ck;
}

Checkpoint checkpoint_of(const TwoStreamNet& net, const CheckpointMeta& meta,
                         const std::vector<Tensor>* adam_m, const std::vector<Tensor>* adam_v) {
  Checkpoint ck;
  ck.meta = meta;
  ck.meta.theta = net.cfg.theta;
  ck.meta.channels = net.cfg.channels;
  ck.meta.segment_length = net.cfg.segment_length;
  ck.meta.variant = variant_name(net.cfg.variant);
  for (int i = 0; i < net.params.size(); ++i)
    ck.tensors.emplace_back(net.params.at(i).name, net.params.at(i).value);
  if (adam_m && adam_v) {
    DERAIN_CHECK(int(adam_m->size()) == net.params.size() &&
                     int(adam_v->size()) == net.params.size(),
                 ErrorCode::InvalidArgument, "optimizer state size mismatch");
    for (int i = 0; i < net.params.size(); ++i) {
      ck.tensors.emplace_back(net.params.at(i).name + "#m", (*adam_m)[std::size_t(i)]);
      ck.tensors.emplace_back(net.params.at(i).name + "#v", (*adam_v)[std::size_t(i)]);
    }
  }
  return ck;
}

TwoStreamNet net_from_checkpoint(const Checkpoint& ck, std::vector<Tensor>* adam_m,
                                 std::vector<Tensor>* adam_v) {
  ModelConfig cfg;
  cfg.channels = ck.meta.channels;
  cfg.segment_length = ck.meta.segment_length;
  cfg.theta = ck.meta.theta;
  cfg.variant = variant_from_name(ck.meta.variant);
  TwoStreamNet net = TwoStreamNet::create(cfg, ck.meta.seed);
  if (adam_m) adam_m->assign(std::size_t(net.params.size()), Tensor());
  if (adam_v) adam_v->assign(std::size_t(net.params.size()), Tensor());
  for (const auto& [name, tensor] : ck.tensors) {
    bool is_m = name.size() > 2 && name.substr(name.size() - 2) == "#m";
    bool is_v = name.size() > 2 && name.substr(name.size() - 2) == "#v";
    if (is_m || is_v) {
      if (!adam_m || !adam_v) continue;
      std::string base = name.substr(0, name.size() - 2);
      int id = net.params.find(base);
      DERAIN_CHECK(id >= 0, ErrorCode::Parse, "checkpoint moment for unknown parameter ", base);
      (is_m ? *adam_m : *adam_v)[std::size_t(id)] = tensor;
      continue;
    }
    int id = net.params.find(name);
    DERAIN_CHECK(id >= 0, ErrorCode::Parse, "checkpoint has unknown parameter ", name);
    DERAIN_CHECK(net.params.at(id).value.same_shape(tensor), ErrorCode::ShapeMismatch,
                 "checkpoint parameter ", name, " has shape ", shape_str(tensor.shape()),
                 " but the net expects ", shape_str(net.params.at(id).value.shape()));
    net.params.at(id).value = tensor;
  }
  return net;
}

// --------------------------------------------------------------- fs utils --

std::vector<std::string> list_frames(const std::string& dir) {
  DERAIN_CHECK(fs::is_directory(dir), ErrorCode::Io, dir, " is not a directory");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Tensor read_video(const std::string& dir) {
  auto paths = list_frames(dir);
  DERAIN_CHECK(!paths.empty(), ErrorCode::Io, "no .ppm/.pgm frames in ", dir);
  Tensor first = read_frame(paths[0]);
  Shape vshape{int(paths.size()), first.dim(0), first.dim(1), first.dim(2)};
  Tensor video(vshape);
  set_slice_outer(video, 0, first);
  for (std::size_t i = 1; i < paths.size(); ++i) {
    Tensor f = read_frame(paths[i]);
    DERAIN_CHECK(f.same_shape(first), ErrorCode::ShapeMismatch, paths[i], ": frame shape ",
                 shape_str(f.shape()), " differs from first frame ", shape_str(first.shape()));
    set_slice_outer(video, int(i), f);
  }
  return video;
}

void write_video(const std::string& dir, const Tensor& video, const char* stem) {
  DERAIN_CHECK(video.rank() == 4, ErrorCode::InvalidArgument, "write_video expects (T,C,H,W)");
  fs::create_directories(dir);
  const char* ext = video.dim(1) == 1 ? "pgm" : "ppm";
  for (int t = 0; t < video.dim(0); ++t) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%05d.%s", stem, t, ext);
    write_frame((fs::path(dir) / name).string(), slice_outer(video, t));
  }
}

}  // namespace derain
