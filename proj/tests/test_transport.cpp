#include <cmath>
#include <thread>

#include "doctest.h"
#include "dp2fl/transport.hpp"

using namespace dp2fl;

namespace {

ModelDims dims() {
  ModelDims d;
  d.classes = 3;
  d.input = 4;
  d.embedding = 2;
  d.task_prompt = 2;
  d.image_prompt = 2;
  d.feature = 4;
  return d;
}

}  // namespace

TEST_CASE("in-process transport is FIFO per endpoint") {
  InProcessTransport t;
  t.send(1, {0, kServerEndpoint, SelfLossReport{1, 0.5}});
  t.send(1, {0, kServerEndpoint, SelfLossReport{1, 0.7}});
  t.send(2, {0, kServerEndpoint, SelfLossReport{2, 0.9}});
  CHECK(t.pending(1) == 2);
  CHECK(std::get<SelfLossReport>(t.receive(1)->payload).loss == 0.5);
  CHECK(std::get<SelfLossReport>(t.receive(1)->payload).loss == 0.7);
  CHECK_FALSE(t.receive(1).has_value());
  CHECK(t.delivered() == 2);
  t.clear();
  CHECK(t.pending(2) == 0);
}

TEST_CASE("concurrent senders lose nothing") {
  InProcessTransport t;
  std::vector<std::thread> threads;
  for (int w = 0; w < 4; ++w)
    threads.emplace_back([&t, w] {
      for (int i = 0; i < 250; ++i) t.send(kServerEndpoint, {0, w, SelfLossReport{w, double(i)}});
    });
  for (auto& th : threads) th.join();
  CHECK(t.pending(kServerEndpoint) == 1000);
}

TEST_CASE("message validation") {
  const ModelDims d = dims();
  const TaskPrompt pt{Vector(2, 0.0)};
  const DataPrompt pd = DataPrompt::zeros(d);
  CHECK_NOTHROW(validate_message({1, 0, TrainedUpload{0, pt, pd, Vector(3, 1.0)}}, d, 3));
  CHECK_THROWS_AS(validate_message({1, 0, TrainedUpload{0, pt, pd, Vector(2, 1.0)}}, d, 3),
                  ProtocolError);
  CHECK_THROWS_AS(validate_message({1, 0, TrainedUpload{0, TaskPrompt{Vector(3)}, pd, Vector(3, 1.0)}}, d, 3),
                  ProtocolError);
  CHECK_THROWS_AS(validate_message({1, 0, TrainedUpload{0, pt, pd, Vector{1.0, -1.0, 1.0}}}, d, 3),
                  ProtocolError);
  CHECK_THROWS_AS(validate_message({1, 0, SelfLossReport{0, std::nan("")}}, d, 3), ProtocolError);
  Batch bad{Matrix(1, 5), {0}};
  CHECK_THROWS_AS(validate_message({0, 0, ValidationUpload{0, bad}}, d, 3), ProtocolError);
}
