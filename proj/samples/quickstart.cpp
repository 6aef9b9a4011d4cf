// Generates a small dataset, trains for a few epochs and scores held-out videos.
#include <iostream>

#include "smoe/smoe.hpp"

int main() {
    using namespace smoe;

    GeneratorConfig gen;
    gen.videos = 60;
    gen.min_duration_s = 5;
    gen.max_duration_s = 6;
    gen.min_event_s = 3;
    gen.max_event_s = 4;
    gen.subjects = gen.objects = 8;
    gen.seed = 11;
    const Dataset train_set = generate(gen);
    gen.seed = 12;
    gen.videos = 20;
    const Dataset eval_set = generate(gen);

    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 4;
    cfg.lr = 5e-3;
    cfg.log_every = 15;
    const TrainResult res = train(cfg, train_set, [](std::size_t step, const StepLoss& loss, const ParamSet&) {
        if (step % 15 == 0) std::cout << "step " << step << "  l_task " << loss.l_task << "  l_gate " << loss.l_gate << '\n';
        return true;
    });

    const ModelEvaluation ev = evaluate_model(res.params, cfg.model, cfg.ablation, eval_set);
    std::cout << '\n' << to_table(ev.report);
    const auto& g = ev.mean_gate.w;
    std::cout << "mean gate  ae " << g[0] << "  ore " << g[1] << "  be " << g[2] << "  ge " << g[3] << '\n';
}
