#pragma once

// Plain adversarial SGD over the full set with no coreset machinery. Uses only the
// model and attack APIs plus the trainer's published seed helpers.

#include "acs/trainer.hpp"

#include <algorithm>
#include <numeric>

namespace oracle
{
inline acs::ModelParams reference_loop(const acs::TrainConfig& cfg, const acs::Dataset& data)
{
    using namespace acs;
    ModelParams p = ModelParams::glorot(cfg.layer_sizes(data.d(), data.num_classes), cfg.activation, init_seed(cfg));
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch)
    {
        std::vector<int> order(static_cast<std::size_t>(data.n()));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(epoch_shuffle_seed(cfg, epoch));
        shuffle.shuffle(order);
        double lr = cfg.lr.initial;
        for (int m : cfg.lr.decay_epochs)
            if (m < epoch)
                lr *= cfg.lr.decay_factor;
        const auto bs = static_cast<std::size_t>(cfg.batch_size);
        int batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += bs, ++batch_no)
        {
            const std::size_t end = std::min(order.size(), start + bs);
            const IndexList rows(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
            const Dataset b = data.subset(rows);
            AttackConfig attack = cfg.attack;
            attack.seed = batch_attack_seed(cfg, epoch, batch_no);
            const Target t = Target::hard(b.labels);
            const Matrix x_adv = pgd_attack(p, b.features, t, attack).x_adv;
            ModelParams g = backward_grads(p, forward(p, x_adv), t);
            for (int l = 0; l < p.num_layers(); ++l)
                g.weights[l] += cfg.weight_decay * p.weights[l];
            for (int l = 0; l < p.num_layers(); ++l)
            {
                p.weights[l] -= lr * g.weights[l];
                p.biases[l] -= lr * g.biases[l];
            }
        }
    }
    return p;
}
} // namespace oracle
