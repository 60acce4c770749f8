// Parallel kernels against their serial references.
#include "prism/library.hpp"
#include "prism/raster.hpp"
#include "prism/reward.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

using namespace prism;

namespace {

std::vector<RenderItem> bench_items() {
  const auto ts = make_task_scene(TaskFamily::stack, 0, 0.0);
  return render_items(ts.scene.world);
}

Camera bench_camera(int size) {
  Camera c = default_cameras().front();
  c.width = c.height = size;
  c.focal *= size / 64.0;
  c.principal = Vec2(0.5 * (size - 1), 0.5 * (size - 1));
  return c;
}

void BM_rasterize_serial(benchmark::State& st) {
  const auto items = bench_items();
  const auto cam = bench_camera(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(rasterize_serial(items, cam));
  st.SetItemsProcessed(st.iterations() * cam.width * cam.height);
}

void BM_rasterize_parallel(benchmark::State& st) {
  const auto items = bench_items();
  const auto cam = bench_camera(static_cast<int>(st.range(0)));
  omp_set_num_threads(static_cast<int>(st.range(1)));
  for (auto _ : st) benchmark::DoNotOptimize(rasterize(items, cam));
  st.SetItemsProcessed(st.iterations() * cam.width * cam.height);
}

struct RelabelFixture {
  RewardModel model;
  ReplayBuffer buf{4096};
  RelabelFixture() {
    Rng rng = make_rng(1, "bench_relabel");
    model.layout = reward_layout({1, 2});
    model.net = Mlp({model.layout.dim(), 64, 32, 1}, rng);
    for (int i = 0; i < 4096; ++i) {
      FeatureVector x(model.layout.dim());
      for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = uniform01(rng) < 0.8 ? 0.0 : uniform01(rng);
      Transition t;
      t.reward_features = pack(x, model.layout);
      buf.add(std::move(t));
    }
  }
};

void BM_relabel_serial(benchmark::State& st) {
  RelabelFixture f;
  for (auto _ : st) relabel_serial(f.buf, f.model);
  st.SetItemsProcessed(st.iterations() * static_cast<long>(f.buf.size()));
}

void BM_relabel_parallel(benchmark::State& st) {
  RelabelFixture f;
  omp_set_num_threads(static_cast<int>(st.range(0)));
  for (auto _ : st) relabel(f.buf, f.model);
  st.SetItemsProcessed(st.iterations() * static_cast<long>(f.buf.size()));
}

}  // namespace

BENCHMARK(BM_relabel_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_relabel_parallel)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_rasterize_serial)->Arg(64)->Arg(256);
BENCHMARK(BM_rasterize_parallel)->Args({64, 1})->Args({64, 4})->Args({256, 1})->Args({256, 4});

BENCHMARK_MAIN();
