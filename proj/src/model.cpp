#include "model.hpp"

namespace derain {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoDetection: return "no_detection";
    case Variant::PlainCnn: return "plain_cnn";
  }
  return "full";
}

Variant variant_from_name(const std::string& s) {
  if (s == "full" || s == "none" || s.empty()) return Variant::Full;
  if (s == "no_detection") return Variant::NoDetection;
  if (s == "plain_cnn") return Variant::PlainCnn;
  throw_error(ErrorCode::InvalidArgument, "unknown ablation mode '", s,
              "' (expected none|no_detection|plain_cnn)");
}

TwoStreamNet TwoStreamNet::create(const ModelConfig& cfg, std::uint64_t seed) {
  DERAIN_CHECK(cfg.theta >= 0.0f && cfg.theta <= 1.0f, ErrorCode::InvalidArgument,
               "fusion degree theta=", cfg.theta, " outside [0,1]");
  DERAIN_CHECK(cfg.channels >= 1, ErrorCode::InvalidArgument, "channels must be >= 1");
  DERAIN_CHECK(cfg.segment_length >= 1, ErrorCode::InvalidArgument, "segment length must be >= 1");
  TwoStreamNet net;
  net.cfg = cfg;
  net.seed = seed;
  Rng rng(seed);
  const int hid = cfg.hidden;
  int stream_in;  // channels entering each bidirectional stack
  if (cfg.variant == Variant::PlainCnn) {
    Rng r0 = rng.fork(1);
    net.shared_plain = PlainChainParams::create(net.params, "shared", cfg.channels, 0, r0);
    Rng r1 = rng.fork(2);
    net.det_plain = PlainChainParams::create(net.params, "det.spatial", net.shared_plain.out_channels(), hid, r1);
    Rng r2 = rng.fork(3);
    net.rem_plain = PlainChainParams::create(net.params, "rem.spatial", net.shared_plain.out_channels(), hid, r2);
    stream_in = hid;
  } else {
    Rng r0 = rng.fork(1);
    net.shared_dense = DenseUnitParams::create(net.params, "shared", cfg.channels, r0);
    Rng r1 = rng.fork(2);
    net.det_dense = DenseUnitParams::create(net.params, "det.spatial", net.shared_dense.out_channels(), r1);
    Rng r2 = rng.fork(3);
    net.rem_dense = DenseUnitParams::create(net.params, "rem.spatial", net.shared_dense.out_channels(), r2);
    stream_in = net.det_dense.out_channels();
  }
  Rng r3 = rng.fork(4);
  net.det_stack = BidirStackParams::create(net.params, "det.lstm", stream_in, hid, r3);
  Rng r4 = rng.fork(5);
  net.rem_stack = BidirStackParams::create(net.params, "rem.lstm", stream_in, hid, r4);
  Rng r5 = rng.fork(6);
  net.det_recon = ReconstructionParams::create(net.params, "det.recon", 2 * hid, hid, cfg.channels, r5);
  Rng r6 = rng.fork(7);
  net.rem_recon = ReconstructionParams::create(net.params, "rem.recon", 2 * hid, hid, cfg.channels, r6);
  return net;
}

std::int64_t TwoStreamNet::expected_param_count(const ModelConfig& cfg) {
  auto conv = [](std::int64_t cout, std::int64_t cin, std::int64_t k) {
    return cout * cin * k * k + cout;  // kernel + bias
  };
  const std::int64_t hid = cfg.hidden, c = cfg.channels;
  std::int64_t n = 0;
  std::int64_t stream_in;
  if (cfg.variant == Variant::PlainCnn) {
    auto chain = [&](std::int64_t cin, bool adapter) {
      std::int64_t m = 0;
      for (int j = 0; j < 4; ++j) m += conv(12, j == 0 ? cin : 12, 3) + 12;  // + slopes
      if (adapter) m += conv(hid, 12, 1);
      return m;
    };
    n += chain(c, false) + 2 * chain(12, true);
    stream_in = hid;
  } else {
    auto dense = [&](std::int64_t cin) {
      std::int64_t m = 0;
      for (int j = 0; j < 4; ++j) m += conv(12, cin + 12 * j, 3) + 12;  // + slopes
      return m;
    };
    n += dense(c) + 2 * dense(c + 48);
    stream_in = c + 96;
  }
  auto lstm_layer = [&](std::int64_t cin) {
    return 4 * (hid * cin * 9) + 4 * (hid * hid * 9) + 4 * hid;
  };
  // two streams x two layers x two directions
  n += 2 * 2 * (lstm_layer(stream_in) + lstm_layer(2 * hid));
  auto recon = [&]() {
    return conv(hid, 2 * hid, 3) + hid + conv(hid, hid, 3) + hid + conv(c, hid, 3);
  };
  n += 2 * recon();
  return n;
}

Var fuse(Tape& t, Var r, Var d, float theta) {
  DERAIN_CHECK(theta >= 0.0f && theta <= 1.0f, ErrorCode::InvalidArgument,
               "fusion degree theta=", theta, " outside [0,1]");
  Var gate = t.scale_shift(d, 1.0f - theta, theta);
  return t.mul(r, gate);
}

ForwardVars model_forward(Tape& t, ParamBinding& bind, const TwoStreamNet& net, Var video) {
  const Tensor& vv = t.value(video);
  DERAIN_CHECK(vv.rank() == 4, ErrorCode::ShapeMismatch,
               "forward: expected (T,C,H,W) video, got ", shape_str(vv.shape()));
  DERAIN_CHECK(vv.dim(0) == net.cfg.segment_length, ErrorCode::ShapeMismatch,
               "forward: video has ", vv.dim(0), " frames but the net is configured for T=",
               net.cfg.segment_length);
  DERAIN_CHECK(vv.dim(1) == net.cfg.channels, ErrorCode::ShapeMismatch,
               "forward: video has ", vv.dim(1), " channels, net expects ", net.cfg.channels);
  DERAIN_CHECK(vv.dim(2) >= 8 && vv.dim(3) >= 8, ErrorCode::InvalidArgument,
               "forward: spatial size ", vv.dim(2), "x", vv.dim(3), " below minimum 8x8");

  const bool plain = net.cfg.variant == Variant::PlainCnn;
  Var shared = plain ? plain_chain_forward(t, bind, net.shared_plain, video)
                     : dense_unit_forward(t, bind, net.shared_dense, video);
  Var det_sp = plain ? plain_chain_forward(t, bind, net.det_plain, shared)
                     : dense_unit_forward(t, bind, net.det_dense, shared);
  Var rem_sp = plain ? plain_chain_forward(t, bind, net.rem_plain, shared)
                     : dense_unit_forward(t, bind, net.rem_dense, shared);

  std::vector<Var> d_feat = bidir_stack_forward_video(t, bind, net.det_stack, det_sp);
  std::vector<Var> r_feat = bidir_stack_forward_video(t, bind, net.rem_stack, rem_sp);

  const float theta = net.cfg.variant == Variant::NoDetection ? 1.0f : net.cfg.theta;
  ForwardVars out;
  const int frames = net.cfg.segment_length;
  out.s_hat.reserve(std::size_t(frames));
  out.c_hat.reserve(std::size_t(frames));
  for (int i = 0; i < frames; ++i) {
    Var d = d_feat[std::size_t(i)];
    Var a = fuse(t, r_feat[std::size_t(i)], d, theta);
    out.d_feat.push_back(d);
    out.a_feat.push_back(a);
    out.s_hat.push_back(reconstruct(t, bind, net.det_recon, d));
    out.c_hat.push_back(reconstruct(t, bind, net.rem_recon, a));
  }
  return out;
}

ModelOutput model_forward_eval(const TwoStreamNet& net, const Tensor& video) {
  Tape t;
  ParamBinding bind(t, const_cast<ParamStore&>(net.params));
  Var v = t.input(video);
  ForwardVars fw = model_forward(t, bind, net, v);
  ModelOutput out;
  Shape s = video.shape();
  out.s_hat = Tensor(s);
  out.c_hat = Tensor(s);
  for (int i = 0; i < net.cfg.segment_length; ++i) {
    set_slice_outer(out.s_hat, i, t.value(fw.s_hat[std::size_t(i)]));
    set_slice_outer(out.c_hat, i, t.value(fw.c_hat[std::size_t(i)]));
  }
  return out;
}

TwoStreamNet ablate(const TwoStreamNet& net, const std::string& mode) {
  Variant v = variant_from_name(mode);
  if (v == Variant::Full) return net;
  if (v == Variant::NoDetection) {
    TwoStreamNet copy = net;
    copy.cfg.variant = Variant::NoDetection;
    copy.cfg.theta = 1.0f;
    return copy;
  }
  // plain_cnn changes parameter shapes; rebuild from the net's seed
  ModelConfig cfg = net.cfg;
  cfg.variant = Variant::PlainCnn;
  return TwoStreamNet::create(cfg, net.seed);
}

}  // namespace derain
