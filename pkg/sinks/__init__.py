"""StateRate bench - Egress (Sink) modules: CSV reports and network checkpoints"""
