"""StateRate bench - scenarios, the training pipeline, experiments and acceptance checks"""
