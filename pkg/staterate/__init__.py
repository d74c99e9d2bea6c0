"""StateRate - next-frame MCS prediction from channel and flight state, with online fine-tuning"""
