"""Rate adapters - baselines, omniscient oracles and the learned StateRate adapter behind one contract"""
