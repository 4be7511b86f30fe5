// Library use without the pipeline: synthesize one benchmark sequence,
// track it, optionally refine with checkpoints, and print a few metrics.
//
//   track_benchmark [seed] [checkpoint_dir]

#include <cstdio>
#include <cstdlib>

#include "offtrack/pipeline.hpp"

using namespace offtrack;

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;
  const SequenceBundle b = generate(benchmark_scenario(seed));
  const ClassThresholds thr;

  std::vector<Track> tracks = track_sequence(b, thr);
  const auto routed = route_tracks(tracks, thr);
  std::printf("%zu frames, %zu gt objects, %zu tracks (%zu refinable)\n", b.frames.size(), b.gt_tracks->size(),
              tracks.size(), routed.refinable.size());

  if (argc > 2) {
    const RefinerModels models = load_models(argv[2]);
    tracks = routed.passthrough;
    for (auto& o : refine_tracks(routed.refinable, to_world_frames(b.frames), models, RefineOptions{}, 0))
      tracks.push_back(std::move(o.track));
  }

  const auto preds = frames_of(tracks, ClassId::kVehicle), gts = frames_of(*b.gt_tracks, ClassId::kVehicle);
  const auto ap = average_precision(preds, gts, 0.7);
  const auto mot = clear_mot(preds, gts, 0.7);
  std::printf("AP@0.7 %.4f  APH %.4f  MOTA %.4f  IDSW %zu  Recall@track %.4f\n", ap.ap, ap.aph, mot.mota, mot.idsw,
              recall_at_track(tracks, *b.gt_tracks, 0.7).ratio());
}
