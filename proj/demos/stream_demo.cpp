// Streams the synthetic surface into a splitting GP, then prints the
// children and a few predictions next to the noise-free truth.

#include <iomanip>
#include <iostream>
#include <sstream>

#include "splitgp/splitgp.hpp"

int main() {
  using namespace splitgp;

  const SeedPlan seeds{42};
  Dataset data = synth_dataset(1200, seeds);
  Dataset holdout;
  std::tie(data, holdout) = train_test_split(data, 1000, 200, seeds);
  center_response(data, holdout);

  SplittingModel model(KernelSpec(Hyperparameters::isotropic(2)), /*split_limit=*/250);
  for (Index r = 0; r < data.size(); r += 50) {
    model.update_batch(data.X.middleRows(r, 50), data.Y.segment(r, 50));
  }

  std::cout << "children: " << model.num_children() << ", footprint "
            << model.memory_footprint() / 1024 << " kB\n";
  for (const auto& c : model.children()) {
    std::cout << "  n=" << std::setw(3) << c.size() << "  center (" << std::fixed
              << std::setprecision(3) << c.center[0] << ", " << c.center[1] << ")\n";
  }
  const auto& h = model.spec().params();
  std::cout << "lengthscales " << h.lengthscales.transpose() << ", signal " << h.signal_variance
            << ", noise " << h.noise_variance << "\n\n";

  std::cout << "      x1      x2    truth     mean      sd\n";
  for (const auto& [x1, x2] : {std::pair{0.0, 0.0}, {0.5, -0.5}, {-0.8, 0.3}, {0.9, 0.9}}) {
    const Vector x = (Vector(2) << x1, x2).finished();
    const auto p = model.predict(x);
    std::cout << std::setw(8) << x1 << std::setw(8) << x2 << std::setw(9) << synth_latent(x1, x2)
              << std::setw(9) << p.mean + data.y_center << std::setw(8) << std::sqrt(*p.variance)
              << '\n';
  }

  std::stringstream snapshot;
  model.save(snapshot);
  const auto restored = SplittingModel::load(snapshot);
  std::cout << "\nsnapshot round trip: " << restored.num_children() << " children, "
            << restored.size() << " observations\n";
}
