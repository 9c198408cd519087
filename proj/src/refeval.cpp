#include "refeval.hpp"

namespace derain {

ModelOutput model_infer(const TwoStreamNet& net, const Tensor& video) {
  DERAIN_CHECK(video.rank() == 4, ErrorCode::ShapeMismatch,
               "infer: expected (T,C,H,W) video, got ", shape_str(video.shape()));
  DERAIN_CHECK(video.dim(0) == net.cfg.segment_length, ErrorCode::ShapeMismatch,
               "infer: video has ", video.dim(0), " frames but the net is configured for T=",
               net.cfg.segment_length);
  auto ps = refeval::params_of<float>(net.params);
  auto in = refeval::from_tensor<float>(video);
  auto out = refeval::model_forward(net, ps, in);
  ModelOutput result;
  result.s_hat = Tensor(video.shape());
  result.c_hat = Tensor(video.shape());
  for (int i = 0; i < net.cfg.segment_length; ++i) {
    set_slice_outer(result.s_hat, i, refeval::to_tensor(out.s_hat[std::size_t(i)]));
    set_slice_outer(result.c_hat, i, refeval::to_tensor(out.c_hat[std::size_t(i)]));
  }
  return result;
}

}  // namespace derain
